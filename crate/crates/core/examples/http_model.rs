//! Talking to a chat-completions endpoint. A tiny local stub stands in for the
//! server so the example runs offline; point `endpoint_url` at vLLM, SGLang or a
//! hosted API to use a real model.
//!
//! cargo run --example http_model

use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use sandbox_rollout::model::{
    request_body, response_body, HttpModelClient, Message, ModelClient, ModelRequest, ModelTurn, ProfileRegistry,
};
use sandbox_rollout::tools::tools_json;
use serde_json::{json, Value};

async fn stub(Json(body): Json<Value>) -> Json<Value> {
    let turn = ModelTurn::call("call-1", "execute_bash", json!({"command": "ls /testbed"}))
        .with_text(format!("Using {} with temperature {}", body["model"], body["temperature"]))
        .with_usage(120, 18);
    Json(response_body(&turn))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move { axum::serve(listener, Router::new().route("/v1/chat/completions", post(stub))).await });

    let mut profile = ProfileRegistry::builtin().get("qwen3-coder-30b-a3b")?;
    profile.endpoint_url = format!("http://{addr}/v1");
    let request = ModelRequest {
        messages: vec![Message::system("You are a careful engineer."), Message::user("What is in /testbed?")],
        tools: Some(tools_json()),
        max_tokens: None,
    };
    println!("request body:\n{}\n", serde_json::to_string_pretty(&request_body(&profile, &request))?);

    let client = HttpModelClient::new(Duration::from_secs(30), 8)?;
    let turn = client.complete(&profile, &request).await?;
    println!("text: {:?}", turn.text);
    for call in &turn.tool_calls {
        println!("tool call {} -> {} {}", call.id, call.name, call.arguments_json());
    }
    println!("usage: {:?}, finish: {:?}", turn.usage, turn.finish_reason);
    Ok(())
}
