//! Run queries read-only and compare them by result fingerprint.
//!
//! Row order and column names do not matter; duplicate rows do.
//!
//! ```bash
//! cargo run -p sqlconsensus --example execute_and_fingerprint
//! ```

use std::time::Duration;

use sqlconsensus::executor::{execute_sql, results_equivalent, DatabaseRef};

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
    let timeout = Duration::from_secs(2);

    let queries = [
        "SELECT name FROM customers WHERE city = 'Paris'",
        "SELECT name AS who FROM customers WHERE city = 'Paris' ORDER BY name DESC",
        "SELECT DISTINCT city FROM customers",
        "SELECT nam FROM customers",
        "DELETE FROM customers",
        "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT max(x) FROM c",
    ];
    let outcomes: Vec<_> = queries.iter().map(|q| execute_sql(&db, q, timeout)).collect();
    for (q, out) in queries.iter().zip(&outcomes) {
        let digest = out.digest().map(|d| d.to_string()[..12].to_string()).unwrap_or_else(|| "-".into());
        println!("{:<9?} {digest:<12} {q}", out.status());
    }
    println!("\nfirst two equivalent: {}", results_equivalent(&outcomes[0], &outcomes[1]));
    Ok(())
}
