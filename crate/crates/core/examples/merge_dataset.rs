//! Turn one task's sampled candidates into a merge-revision training example.
//!
//! ```bash
//! cargo run -p sqlconsensus --example merge_dataset
//! ```

use std::time::Duration;

use sqlconsensus::corpus::{build_merge_training_sample, TaskRecord};
use sqlconsensus::executor::{execute_sql, DatabaseRef};
use sqlconsensus::prompts::TruncationLimits;
use sqlconsensus::sampler::parse_model_output;

fn main() -> Result<(), Box<dyn std::error::Error>> {
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
    let task = TaskRecord {
        task_id: "m1".into(),
        db_id: "shop".into(),
        question: "Which customers live in Paris?".into(),
        evidence: None,
        schema_ddl: "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);".into(),
        gold_sql: "SELECT name FROM customers WHERE city = 'Paris'".into(),
        difficulty: Default::default(),
    };

    // the majority is wrong; the runner-up matches gold
    let raw = [
        "SELECT name FROM customers",
        "SELECT name FROM customers",
        "SELECT name FROM customers",
        "SELECT name FROM customers WHERE city = 'Paris'",
        "SELECT name FROM customers WHERE city = 'Paris'",
        "SELECT nme FROM customers",
    ]
    .map(|sql| format!("<think>t</think>\n<answer>{sql}</answer>"));
    let timeout = Duration::from_secs(2);
    let candidates: Vec<_> = raw.iter().map(|r| parse_model_output(r)).collect();
    let outcomes: Vec<_> = candidates
        .iter()
        .map(|c| execute_sql(&db, c.answer_sql.as_deref().unwrap_or(""), timeout))
        .collect();
    let gold = execute_sql(&db, &task.gold_sql, timeout);

    match build_merge_training_sample(&task, &candidates, &outcomes, &gold, &TruncationLimits::default())? {
        Some(s) => {
            println!("draft A ({} votes): {}", s.votes_a, s.draft_a);
            println!("draft B ({} votes): {}", s.votes_b, s.draft_b);
            println!("label:              {}", s.label_sql);
            println!("\n{}", s.prompt);
        }
        None => println!("no usable pair of drafts"),
    }
    Ok(())
}
