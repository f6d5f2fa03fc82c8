#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use rusqlite::Connection;
use sqlconsensus::corpus::{Difficulty, TaskRecord};
use sqlconsensus::executor::DatabaseRef;
use sqlconsensus::sampler::SamplingConfig;

pub const SHOP_DDL: &str = "\
CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT NOT NULL, city TEXT);
CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER REFERENCES customers(id), amount REAL, placed TEXT);
INSERT INTO customers VALUES (1,'Ada','Paris'),(2,'Ben','Oslo'),(3,'Cy','Paris'),(4,'Di',NULL);
INSERT INTO orders VALUES (1,1,10.5,'2024-01-02'),(2,1,20.0,'2024-02-03'),(3,2,7.25,'2024-02-04'),(4,3,99.0,'2024-03-01'),(5,3,1.0,'2024-03-02');";

pub fn shop_db(dir: &Path) -> DatabaseRef {
    let path = dir.join("shop.sqlite");
    Connection::open(&path).unwrap().execute_batch(SHOP_DDL).unwrap();
    DatabaseRef {
        db_id: "shop".into(),
        path,
    }
}

pub fn task(id: &str, question: &str, gold: &str) -> TaskRecord {
    TaskRecord {
        task_id: id.into(),
        db_id: "shop".into(),
        question: question.into(),
        evidence: None,
        schema_ddl: "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT NOT NULL, city TEXT)".into(),
        gold_sql: gold.into(),
        difficulty: Difficulty::Simple,
    }
}

pub fn answer(sql: &str) -> String {
    format!("<think>\nreasoning\n</think>\n<answer>\n{sql}\n</answer>")
}

pub fn fast_sampling(n: usize) -> SamplingConfig {
    SamplingConfig {
        n_samples: n,
        retry_backoff: Duration::from_millis(5),
        request_timeout: Duration::from_secs(10),
        ..SamplingConfig::generation()
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
