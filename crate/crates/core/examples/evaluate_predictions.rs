//! Execution accuracy over a handful of predictions, as a table.
//!
//! ```bash
//! cargo run -p sqlconsensus --example evaluate_predictions
//! ```

use std::collections::HashMap;

use sqlconsensus::consensus::{Prediction, Stage};
use sqlconsensus::corpus::{Difficulty, TaskRecord};
use sqlconsensus::eval::{execution_accuracy, EvalOptions};
use sqlconsensus::executor::DatabaseRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shop.sqlite");
    rusqlite::Connection::open(&path)?.execute_batch(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
         INSERT INTO customers VALUES (1, 'Ada', 'Paris'), (2, 'Bo', 'Oslo'), (3, 'Cy', 'Paris');",
    )?;
    let mut registry = DatabaseRegistry::new();
    registry.register("shop", &path)?;

    let cases = [
        (
            "q1",
            Difficulty::Simple,
            "SELECT COUNT(*) FROM customers",
            "SELECT count(id) FROM customers",
            Stage::Sc,
        ),
        (
            "q2",
            Difficulty::Simple,
            "SELECT name FROM customers WHERE city = 'Oslo'",
            "SELECT name FROM customers",
            Stage::Sc,
        ),
        (
            "q3",
            Difficulty::Moderate,
            "SELECT city, COUNT(*) FROM customers GROUP BY city",
            "SELECT city, COUNT(*) FROM customers GROUP BY 1",
            Stage::CscMerge,
        ),
        ("q4", Difficulty::Challenge, "SELECT MAX(id) FROM customers", "", Stage::Fallback),
    ];
    let mut tasks = HashMap::new();
    let mut preds = vec![];
    for (id, difficulty, gold, pred, stage) in cases {
        tasks.insert(
            id.to_string(),
            TaskRecord {
                task_id: id.into(),
                db_id: "shop".into(),
                question: format!("question {id}"),
                evidence: None,
                schema_ddl: String::new(),
                gold_sql: gold.into(),
                difficulty,
            },
        );
        preds.push(Prediction {
            task_id: id.into(),
            final_sql: pred.into(),
            stage,
            n_gen: 8,
            n_merge: 0,
            vote_histogram: vec![],
            wall_time_ms: 0,
            gen_time_ms: 0,
            merge_time_ms: 0,
            provenance: vec![],
            merge_choice: None,
        });
    }
    let report = execution_accuracy(&preds, &tasks, &registry, &EvalOptions::default())?;
    println!("{}", report.render_table());
    Ok(())
}
