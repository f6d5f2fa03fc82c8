use std::collections::HashMap;
use std::time::Duration;

use proptest::prelude::*;
use sqlconsensus::consensus::{decide_vote, group_candidates, VoteOutcome};
use sqlconsensus::corpus::{build_merge_training_sample, normalize_cot, render_think_answer, Difficulty, RawTrainingSample, TaskRecord};
use sqlconsensus::executor::{normalize_rows, normalize_rows_with, Cell, ExecutionOutcome};
use sqlconsensus::prompts::{render_generation_prompt, truncate_exec_result, GenerationPromptInput, TruncationLimits, TRUNCATION_MARKER};
use sqlconsensus::sampler::{parse_model_output, ParsedCandidate};

fn task() -> TaskRecord {
    TaskRecord {
        task_id: "p".into(),
        db_id: "d".into(),
        question: "q".into(),
        evidence: None,
        schema_ddl: "CREATE TABLE t (x INT)".into(),
        gold_sql: "SELECT 1".into(),
        difficulty: Difficulty::Simple,
    }
}

/// Outcome whose fingerprint is determined by `key`; `None` is an error.
fn outcome(key: Option<u8>) -> ExecutionOutcome {
    match key {
        Some(k) => ExecutionOutcome::success(normalize_rows(vec![vec![Cell::Int(k as i64)]]).unwrap(), Duration::ZERO),
        None => ExecutionOutcome::error(sqlconsensus::executor::ErrorKind::Runtime, "boom", Duration::ZERO),
    }
}

fn cand(i: usize) -> ParsedCandidate {
    ParsedCandidate {
        raw: String::new(),
        think: None,
        answer_sql: Some(format!("SELECT {i}")),
        format_ok: true,
    }
}

/// Groups by key in first-appearance order, then largest first (stable).
fn brute_groups(keys: &[Option<u8>]) -> Vec<(u8, Vec<usize>)> {
    let mut order: Vec<u8> = vec![];
    let mut members: HashMap<u8, Vec<usize>> = HashMap::new();
    for (i, k) in keys.iter().enumerate() {
        if let Some(k) = k {
            if !members.contains_key(k) {
                order.push(*k);
            }
            members.entry(*k).or_default().push(i);
        }
    }
    let mut out: Vec<(u8, Vec<usize>)> = order.into_iter().map(|k| (k, members[&k].clone())).collect();
    // selection by (votes desc, first index asc)
    out.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])));
    out
}

fn think_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.()=']{1,80}"
        .prop_map(|s| s.trim().to_string())
        .prop_filter("non-empty", |s| !s.is_empty())
}

fn select_sql() -> impl Strategy<Value = String> {
    ("[a-z]{1,8}", "[a-z]{1,8}", 0i32..1000).prop_map(|(c, t, n)| format!("SELECT {c} FROM {t} WHERE {c} > {n}"))
}

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        Just(Cell::Null),
        (-5i64..5).prop_map(Cell::Int),
        (-5i32..5).prop_map(|x| Cell::from_real(x as f64 / 2.0)),
        "[ab]{0,2}".prop_map(Cell::Text),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalized_samples_round_trip(think in think_text(), sql in select_sql()) {
        let rendered = render_think_answer(&think, &sql);
        let parsed = parse_model_output(&rendered);
        prop_assert!(parsed.format_ok);
        prop_assert_eq!(parsed.think.as_deref(), Some(think.as_str()));
        prop_assert_eq!(parsed.answer_sql.as_deref(), Some(sql.as_str()));

        let again = normalize_cot(&RawTrainingSample { task: task(), cot: rendered.clone() }).unwrap();
        prop_assert_eq!(again.rendered, rendered);
    }

    #[test]
    fn fenced_cot_normalizes_to_its_final_block(think in think_text(), sql in select_sql()) {
        let cot = format!("{think}\n```sql\n{sql}\n```\nThat should work.");
        let n = normalize_cot(&RawTrainingSample { task: task(), cot }).unwrap();
        prop_assert_eq!(&n.answer_sql, &sql);
        prop_assert_eq!(&n.think, &think);
        prop_assert!(parse_model_output(&n.rendered).format_ok);
    }

    #[test]
    fn grouping_matches_brute_force(keys in prop::collection::vec(prop::option::weighted(0.8, 0u8..4), 0..16)) {
        let cands: Vec<_> = (0..keys.len()).map(cand).collect();
        let outs: Vec<_> = keys.iter().map(|k| outcome(*k)).collect();
        let groups = group_candidates(&cands, &outs).unwrap();
        let want = brute_groups(&keys);
        prop_assert_eq!(groups.len(), want.len());
        for (g, (_, members)) in groups.iter().zip(&want) {
            prop_assert_eq!(&g.member_indices, members);
            prop_assert_eq!(g.votes, members.len());
            prop_assert_eq!(&g.representative_sql, &format!("SELECT {}", members[0]));
        }
    }

    #[test]
    fn merge_samples_match_brute_force(keys in prop::collection::vec(prop::option::weighted(0.8, 0u8..4), 0..12), gold in 0u8..4) {
        let cands: Vec<_> = (0..keys.len()).map(cand).collect();
        let outs: Vec<_> = keys.iter().map(|k| outcome(*k)).collect();
        let got = build_merge_training_sample(&task(), &cands, &outs, &outcome(Some(gold)), &TruncationLimits::default()).unwrap();
        let groups = brute_groups(&keys);
        let want = if groups.len() < 2 {
            None
        } else if groups[0].0 == gold {
            Some((groups[0].1[0], groups[1].1[0], groups[0].1[0]))
        } else if groups[1].0 == gold {
            Some((groups[0].1[0], groups[1].1[0], groups[1].1[0]))
        } else {
            None
        };
        match (got, want) {
            (None, None) => {}
            (Some(s), Some((a, b, label))) => {
                prop_assert_eq!(s.draft_a, format!("SELECT {a}"));
                prop_assert_eq!(s.draft_b, format!("SELECT {b}"));
                prop_assert_eq!(s.label_sql, format!("SELECT {label}"));
                let line = format!("1. SELECT {a}\n");
                prop_assert!(s.prompt.contains(&line));
            }
            (g, w) => prop_assert!(false, "got {:?}, want {:?}", g.map(|s| s.label_sql), w),
        }
    }

    #[test]
    fn adding_a_winning_vote_keeps_the_winner(keys in prop::collection::vec(prop::option::weighted(0.8, 0u8..4), 1..16)) {
        let cands: Vec<_> = (0..=keys.len()).map(cand).collect();
        let outs: Vec<_> = keys.iter().map(|k| outcome(*k)).collect();
        let groups = group_candidates(&cands[..keys.len()], &outs).unwrap();
        let before = match decide_vote(&groups) {
            VoteOutcome::Consistent(g) | VoteOutcome::Contested(g, _) => g.digest(),
            VoteOutcome::Abstain => return Ok(()),
        };
        let winner_key = keys[groups[0].first_index()];
        let mut more = outs.clone();
        more.push(outcome(winner_key));
        let groups2 = group_candidates(&cands, &more).unwrap();
        let after = match decide_vote(&groups2) {
            VoteOutcome::Consistent(g) | VoteOutcome::Contested(g, _) => g.digest(),
            VoteOutcome::Abstain => unreachable!(),
        };
        prop_assert_eq!(before, after);
        prop_assert_eq!(groups2.len(), groups.len());
    }

    #[test]
    fn fingerprint_ignores_row_order(rows in prop::collection::vec(prop::collection::vec(cell(), 2), 0..8), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        if n > 1 {
            shuffled.rotate_left((seed as usize) % n);
            shuffled.swap(0, (seed as usize / 7) % n);
        }
        let a = normalize_rows(rows.clone()).unwrap();
        let b = normalize_rows(shuffled.clone()).unwrap();
        prop_assert_eq!(a.digest, b.digest);
        // ordered fingerprints see the permutation
        let oa = normalize_rows_with(rows.clone(), Some(2), true).unwrap();
        let ob = normalize_rows_with(shuffled.clone(), Some(2), true).unwrap();
        prop_assert_eq!(oa.digest == ob.digest, rows == shuffled);
    }

    #[test]
    fn fingerprint_equal_iff_multisets_equal(
        a in prop::collection::vec(prop::collection::vec(cell(), 1), 0..5),
        b in prop::collection::vec(prop::collection::vec(cell(), 1), 0..5),
    ) {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort();
        sb.sort();
        let same = normalize_rows(a).unwrap().digest == normalize_rows(b).unwrap().digest;
        prop_assert_eq!(same, sa == sb);
    }

    #[test]
    fn placeholders_substituted_once(
        question in "[a-zA-Z ?{}_]{1,40}",
        schema in "[A-Z ();,a-z{}]{0,40}",
        evidence in prop::option::of("[a-z {}=]{0,20}"),
    ) {
        prop_assume!(!question.trim().is_empty());
        let rendered = render_generation_prompt(&GenerationPromptInput {
            schema_ddl: schema.clone(),
            evidence: evidence.clone(),
            question: question.clone(),
        });
        prop_assert!(rendered.contains(&question));
        prop_assert!(rendered.contains(&schema));
        for ph in ["{DATABASE SCHEMA}", "{QUESTION}", "{EVIDENCE}"] {
            let in_values = question.contains(ph) || schema.contains(ph) || evidence.as_deref().is_some_and(|e| e.contains(ph));
            prop_assert!(in_values || !rendered.contains(ph), "{} left in prompt", ph);
        }
        let has_evidence = evidence.as_deref().is_some_and(|e| !e.trim().is_empty());
        if has_evidence {
            prop_assert!(rendered.contains(evidence.as_deref().unwrap()));
        }
    }

    #[test]
    fn truncation_respects_bounds(
        n_rows in 0usize..40,
        width in 1usize..30,
        max_rows in 1usize..15,
        max_chars in 1usize..300,
    ) {
        let rows: Vec<Vec<Cell>> = (0..n_rows).map(|i| vec![Cell::Text("x".repeat(width)), Cell::Int(i as i64)]).collect();
        let out = ExecutionOutcome::success(normalize_rows(rows).unwrap(), Duration::ZERO);
        let limits = TruncationLimits::new(max_rows, max_chars).unwrap();
        let text = truncate_exec_result(&out, &limits);
        let uncut = truncate_exec_result(&out, &TruncationLimits::new(max_rows, usize::MAX).unwrap());
        let marker = TRUNCATION_MARKER.chars().count();
        prop_assert!(text.chars().count() <= max_chars + marker);
        let body = text.strip_suffix(TRUNCATION_MARKER).unwrap_or(&text);
        prop_assert!(body.matches("('").count() <= max_rows);
        let truncated = n_rows > max_rows || uncut.chars().count() > max_chars;
        prop_assert_eq!(text.ends_with(TRUNCATION_MARKER), truncated);
    }
}
