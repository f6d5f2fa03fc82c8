mod common;

use std::time::Duration;

use common::{answer, fast_sampling, task};
use sqlconsensus::consensus::{CscPipeline, CscSettings, MergeChoice, Stage, VoteOutcome};
use sqlconsensus::executor::{ExecOptions, Executor};
use sqlconsensus::mock::{MockReply, MockServer};
use sqlconsensus::sampler::{ModelEndpoint, Sampler};

const GOLD: &str = "SELECT name FROM customers WHERE city = 'Paris'";
const WRONG: &str = "SELECT name FROM customers";

fn pipeline(gen: &MockServer, merge: Option<&MockServer>, n_gen: usize) -> CscPipeline {
    let ep = |s: &MockServer| ModelEndpoint::new(&s.base_url(), "m", None).unwrap();
    let generator = Sampler::new(ep(gen), fast_sampling(n_gen)).unwrap();
    let merger = merge.map(|m| Sampler::new(ep(m), fast_sampling(4)).unwrap());
    let exec = Executor::new(ExecOptions::with_timeout(Duration::from_secs(5)), 4);
    CscPipeline::new(generator, merger, exec, CscSettings::default())
}

#[tokio::test]
async fn unanimous_vote_skips_merge() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    let gen = MockServer::start(|r| {
        // same result, different spelling
        MockReply::text(answer(if r.call_index % 2 == 0 {
            GOLD
        } else {
            "SELECT name FROM customers WHERE city='Paris' ORDER BY id"
        }))
    })
    .unwrap();
    let merge = MockServer::start(|_| MockReply::text(answer(WRONG))).unwrap();
    let trace = pipeline(&gen, Some(&merge), 6)
        .run_traced(&task("t", "q", GOLD), &db)
        .await
        .unwrap();
    assert_eq!(trace.prediction.stage, Stage::Sc);
    assert_eq!(trace.prediction.final_sql, GOLD);
    assert_eq!(trace.prediction.vote_histogram, vec![6]);
    assert!(matches!(trace.vote, VoteOutcome::Consistent(_)));
    assert_eq!(merge.stats().requests(), 0);
}

#[tokio::test]
async fn contested_vote_goes_to_merge() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    // wrong answer leads 3:2, merge model picks the minority draft
    let gen = MockServer::start(|r| MockReply::text(answer(if r.call_index < 3 { WRONG } else { GOLD }))).unwrap();
    let merge = MockServer::start(|_| MockReply::text(answer(GOLD))).unwrap();
    let p = pipeline(&gen, Some(&merge), 5);
    let trace = p.run_traced(&task("t", "Names in Paris?", GOLD), &db).await.unwrap();
    let pred = &trace.prediction;
    assert_eq!(pred.stage, Stage::CscMerge);
    assert_eq!(pred.final_sql, GOLD);
    assert_eq!(pred.merge_choice, Some(MergeChoice::DraftB));
    assert_eq!((pred.n_gen, pred.n_merge), (5, 4));
    assert_eq!(pred.vote_histogram, vec![3, 2]);

    let prompt = trace.merge_prompt.unwrap();
    assert!(prompt.contains(&format!("1. {WRONG}\n")));
    assert!(prompt.contains(&format!("2. {GOLD}\n")));
    assert!(prompt.contains("[('Ada',), ('Cy',)]"));
    assert!(merge.stats().prompts().iter().all(|p| *p == prompt));
}

#[tokio::test]
async fn contested_without_merge_takes_plurality() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    let gen = MockServer::start(|r| MockReply::text(answer(if r.call_index < 3 { WRONG } else { GOLD }))).unwrap();
    let pred = pipeline(&gen, None, 5).run(&task("t", "q", GOLD), &db).await.unwrap();
    assert_eq!(pred.stage, Stage::Majority);
    assert_eq!(pred.final_sql, WRONG);
    assert_eq!(pred.provenance, vec![0, 1, 2]);
}

#[tokio::test]
async fn nothing_executes_falls_back() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    let gen = MockServer::start(|_| MockReply::text(answer("SELECT nope FROM nowhere"))).unwrap();
    let pred = pipeline(&gen, None, 3).run(&task("t", "q", GOLD), &db).await.unwrap();
    assert_eq!(pred.stage, Stage::Fallback);
    assert_eq!(pred.final_sql, "SELECT nope FROM nowhere");
    assert!(pred.vote_histogram.is_empty());
}

#[tokio::test]
async fn merge_with_no_usable_sample_keeps_leader() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    let gen = MockServer::start(|r| MockReply::text(answer(if r.call_index < 3 { WRONG } else { GOLD }))).unwrap();
    let merge = MockServer::start(|_| MockReply::text("I cannot decide.")).unwrap();
    let pred = pipeline(&gen, Some(&merge), 5).run(&task("t", "q", GOLD), &db).await.unwrap();
    assert_eq!(pred.stage, Stage::CscMerge);
    assert_eq!(pred.merge_choice, Some(MergeChoice::NoResult));
    assert_eq!(pred.final_sql, WRONG);
}
