//! Filter a chain-of-thought corpus and normalize the survivors.
//!
//! ```bash
//! cargo run -p sqlconsensus --example filter_corpus
//! ```

use sqlconsensus::corpus::{filter_training_sample, normalize_cot, FilterVerdict, RawTrainingSample, TaskRecord, DEFAULT_TOKEN_LIMIT};

fn sample(id: &str, gold: &str, cot: &str) -> RawTrainingSample {
    RawTrainingSample {
        task: TaskRecord {
            task_id: id.into(),
            db_id: "shop".into(),
            question: "Which customers live in Paris?".into(),
            evidence: None,
            schema_ddl: "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);".into(),
            gold_sql: gold.into(),
            difficulty: Default::default(),
        },
        cot: cot.into(),
    }
}

fn main() {
    let gold = "SELECT name FROM customers WHERE city = 'Paris'";
    // the final SQL is the last fenced block (or last statement) of the CoT
    let samples = [
        sample(
            "ok",
            gold,
            &format!("Only the city column matters.\n```sql\n{gold}\n```\nThat lists them."),
        ),
        sample("leaky", gold, &format!("Draft: {gold}; looks right.\n```sql\n{gold}\n```")),
        sample("commented", gold, &format!("Filter on city.\n```sql\n{gold} -- Paris only\n```")),
        sample(
            "not_select",
            gold,
            "Use a CTE.\n```sql\nWITH p AS (SELECT * FROM customers) SELECT name FROM p\n```",
        ),
    ];
    for s in &samples {
        match filter_training_sample(s, DEFAULT_TOKEN_LIMIT) {
            FilterVerdict::Accept => {
                let norm = normalize_cot(s).expect("accepted samples normalize");
                println!("{:<11} accept\n{}\n", s.task.task_id, norm.rendered);
            }
            FilterVerdict::Reject(rule) => println!("{:<11} reject: {}", s.task.task_id, rule.as_str()),
        }
    }
}
