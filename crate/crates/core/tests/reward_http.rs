mod common;

use std::time::Duration;

use serde_json::{json, Value};
use sqlconsensus::executor::DatabaseRegistry;
use sqlconsensus::reward::{RewardConfig, RewardService};

async fn start() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let db = common::shop_db(dir.path());
    let mut reg = DatabaseRegistry::new();
    reg.register("shop", &db.path).unwrap();
    let cfg = RewardConfig {
        timeout: Duration::from_secs(5),
        ..RewardConfig::default()
    };
    let (addr, _handle) = RewardService::new(reg, cfg, 4).spawn("127.0.0.1:0".parse().unwrap()).await.unwrap();
    (dir, format!("http://{addr}"))
}

async fn post(url: &str, body: Value) -> (u16, Value) {
    let resp = reqwest::Client::new().post(url).json(&body).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

const GOLD: &str = "SELECT name FROM customers WHERE city = 'Paris'";

#[tokio::test]
async fn score_all_four_branches() {
    let (_d, base) = start().await;
    let cases = [
        (common::answer(GOLD), 1.1),
        (common::answer("SELECT name FROM customers"), 0.1),
        (format!("Answer: {GOLD}"), 1.0),
        ("nothing".to_string(), 0.0),
    ];
    for (raw, want) in cases {
        let (status, body) = post(
            &format!("{base}/score"),
            json!({"raw_output": raw, "gold_sql": GOLD, "db_id": "shop"}),
        )
        .await;
        assert_eq!(status, 200);
        assert_eq!(body["total"].as_f64().unwrap(), want, "{raw}");
    }
}

#[tokio::test]
async fn structured_errors() {
    let (_d, base) = start().await;
    let (status, body) = post(
        &format!("{base}/score"),
        json!({"raw_output": "x", "gold_sql": GOLD, "db_id": "nope"}),
    )
    .await;
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "unknown_database");

    let (status, body) = post(
        &format!("{base}/score"),
        json!({"raw_output": "x", "gold_sql": "SELECT * FROM missing", "db_id": "shop"}),
    )
    .await;
    assert_eq!(status, 422);
    assert_eq!(body["error"]["code"], "gold_execution_failed");

    let (status, body) = post(&format!("{base}/score"), json!({"raw_output": 5})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "malformed_request");
}

#[tokio::test]
async fn batch_preserves_order_with_per_item_errors() {
    let (_d, base) = start().await;
    let items = json!({"items": [
        {"raw_output": common::answer(GOLD), "gold_sql": GOLD, "db_id": "shop"},
        {"raw_output": "x", "gold_sql": GOLD, "db_id": "nope"},
        {"raw_output": "nothing", "gold_sql": GOLD, "db_id": "shop", "timeout_ms": 1000},
    ]});
    let (status, body) = post(&format!("{base}/score_batch"), items).await;
    assert_eq!(status, 200);
    let scores = body["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 3);
    assert_eq!(scores[0]["total"].as_f64(), Some(1.1));
    assert_eq!(scores[1]["error"]["code"], "unknown_database");
    assert_eq!(scores[2]["total"].as_f64(), Some(0.0));
}

#[tokio::test]
async fn health_reports_databases() {
    let (_d, base) = start().await;
    let body: Value = reqwest::get(format!("{base}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(body, json!({"status": "ok", "databases": 1}));
}
