//! Score model outputs in-process and over HTTP.
//!
//! ```bash
//! cargo run -p sqlconsensus --example reward_service
//! ```

use sqlconsensus::executor::{DatabaseRef, DatabaseRegistry};
use sqlconsensus::reward::{total_reward, RewardConfig, RewardService};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("shop.sqlite");
    rusqlite::Connection::open(&path)?.execute_batch(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
         INSERT INTO customers VALUES (1, 'Ada', 'Paris'), (2, 'Bo', 'Oslo');",
    )?;
    let gold = "SELECT name FROM customers WHERE city = 'Paris'";
    let db = DatabaseRef {
        db_id: "shop".into(),
        path: path.clone(),
    };

    let outputs = [
        format!("<think>filter by city</think>\n<answer>{gold}</answer>"),
        "<think>all of them</think>\n<answer>SELECT name FROM customers</answer>".to_string(),
        format!("Sure: {gold}"),
        "I don't know.".to_string(),
    ];
    for out in &outputs {
        let s = total_reward(out, gold, &db)?;
        println!("ex={} format={} total={:<4} {:?}", s.r_ex, s.r_format, s.total, out);
    }

    let mut registry = DatabaseRegistry::new();
    registry.register("shop", &path)?;
    let (addr, _server) = RewardService::new(registry, RewardConfig::default(), 4)
        .spawn("127.0.0.1:0".parse()?)
        .await?;
    let body = serde_json::json!({"db_id": "shop", "gold_sql": gold, "raw_output": outputs[0]});
    let resp: serde_json::Value = reqwest::Client::new()
        .post(format!("http://{addr}/score"))
        .json(&body)
        .send()
        .await?
        .json()
        .await?;
    println!("\nPOST /score -> {resp}");
    Ok(())
}
