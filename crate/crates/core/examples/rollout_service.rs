//! The HTTP rollout service: submit an episode, poll until it finishes, fetch
//! its trajectory.
//!
//! cargo run --example rollout_service

use std::sync::Arc;
use std::time::Duration;

use sandbox_rollout::model::{ModelProfile, ProfileRegistry};
use sandbox_rollout::rewards::EvaluatorRegistry;
use sandbox_rollout::rollout::Mode;
use sandbox_rollout::service::{Service, ServiceBackends, ServiceConfig};
use sandbox_rollout::toy::{toy_suite, ToySolver};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = tempfile::tempdir()?;
    let mut config = ServiceConfig::new(store.path(), "toy");
    config.auth_token = Some("let-me-in".into());
    config.run.mode = Mode::PlainLlm;
    let profiles = ProfileRegistry { profiles: [("toy".to_string(), ModelProfile::new("toy"))].into() };
    let backends = ServiceBackends { fleet: None, model: Arc::new(ToySolver), profiles, evaluators: EvaluatorRegistry::new() };
    let service = Service::start(config, backends)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let router = service.router();
    tokio::spawn(async move { axum::serve(listener, router).await });

    let http = reqwest::Client::new();
    let health: Value = http.get(format!("{base}/health")).send().await?.json().await?;
    println!("health: {health}");

    let resp = http
        .post(format!("{base}/v1/episodes"))
        .bearer_auth("let-me-in")
        .json(&json!({ "task": toy_suite()[0], "scoring": "rl" }))
        .send()
        .await?;
    let submitted: Value = resp.json().await?;
    let id = submitted["episode_id"].as_str().unwrap().to_string();
    println!("submitted: {submitted}");

    let view = loop {
        let view: Value = http.get(format!("{base}/v1/episodes/{id}")).bearer_auth("let-me-in").send().await?.json().await?;
        if view["status"] == "completed" || view["status"] == "failed" {
            break view;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    println!("status {} reward {}", view["status"], view["result"]["reward"]);
    let traj: Value = http.get(format!("{base}/v1/episodes/{id}/trajectory")).bearer_auth("let-me-in").send().await?.json().await?;
    println!("trajectory has {} turn(s)", traj["turns"].as_array().map_or(0, Vec::len));

    let denied = http.post(format!("{base}/v1/episodes")).json(&json!({})).send().await?;
    println!("without a token: {}", denied.status());
    Ok(())
}
