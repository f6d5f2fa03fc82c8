//! Full two-stage prediction against a scripted chat-completions server.
//!
//! The generator splits its votes 5:3 between two queries, so the task is
//! contested and the merge model is asked to pick.
//!
//! ```bash
//! cargo run -p sqlconsensus --example csc_with_mock_server
//! ```

use std::time::Duration;

use sqlconsensus::consensus::{CscPipeline, CscSettings};
use sqlconsensus::corpus::TaskRecord;
use sqlconsensus::executor::{DatabaseRef, ExecOptions, Executor};
use sqlconsensus::mock::{MockReply, MockServer};
use sqlconsensus::sampler::{ModelEndpoint, Sampler, SamplingConfig};

const RIGHT: &str = "SELECT COUNT(*) FROM customers WHERE city = 'Paris'";
const WRONG: &str = "SELECT COUNT(*) FROM customers";

fn tagged(sql: &str) -> String {
    format!("<think>\nCount the rows.\n</think>\n<answer>\n{sql}\n</answer>")
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shop.sqlite");
    rusqlite::Connection::open(&path)?.execute_batch(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
         INSERT INTO customers VALUES (1, 'Ada', 'Paris'), (2, 'Bo', 'Oslo'), (3, 'Cy', 'Paris');",
    )?;
    let db = DatabaseRef {
        db_id: "shop".into(),
        path,
    };

    let generator = MockServer::start(|req| MockReply::text(tagged(if req.call_index < 5 { WRONG } else { RIGHT })))?;
    let merger = MockServer::start(|_| MockReply::text(tagged(RIGHT)))?;

    let gen_cfg = SamplingConfig {
        n_samples: 8,
        ..SamplingConfig::generation()
    };
    let merge_cfg = SamplingConfig {
        n_samples: 4,
        ..SamplingConfig::merge()
    };
    let pipeline = CscPipeline::new(
        Sampler::new(ModelEndpoint::new(&generator.base_url(), "gen", None)?, gen_cfg)?,
        Some(Sampler::new(ModelEndpoint::new(&merger.base_url(), "merge", None)?, merge_cfg)?),
        Executor::new(ExecOptions::with_timeout(Duration::from_secs(2)), 4),
        CscSettings::default(),
    );
    let task = TaskRecord {
        task_id: "demo".into(),
        db_id: "shop".into(),
        question: "How many customers live in Paris?".into(),
        evidence: None,
        schema_ddl: "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);".into(),
        gold_sql: RIGHT.into(),
        difficulty: Default::default(),
    };
    let trace = pipeline.run_traced(&task, &db).await?;
    let p = &trace.prediction;
    println!("vote:      {:?} {:?}", trace.vote.kind(), p.vote_histogram);
    println!("stage:     {:?} ({:?})", p.stage, p.merge_choice);
    println!("final sql: {}", p.final_sql);
    println!(
        "requests:  {} generation, {} merge",
        generator.stats().requests(),
        merger.stats().requests()
    );
    Ok(())
}
