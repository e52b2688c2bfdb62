//! The three tools as a model calls them: create, edit and view files, run a
//! command, then submit.
//!
//! cargo run --example editor_tool

use std::sync::Arc;

use sandbox_rollout::sandbox::{NamespaceRuntime, SandboxConfig, SandboxFleet};
use sandbox_rollout::tools::{dispatch, tools_json, ToolCall, ToolConfig};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    NamespaceRuntime::probe()?;
    let state = tempfile::tempdir()?;
    let fleet = SandboxFleet::new(Arc::new(NamespaceRuntime::new(state.path())?), SandboxConfig::default())?;
    let mut sb = fleet.create().await?;
    let names: Vec<_> = tools_json().as_array().unwrap().iter().map(|t| t["function"]["name"].clone()).collect();
    println!("tools offered to the model: {names:?}\n");

    let calls = [
        ("str_replace_editor", json!({"command": "create", "path": "/testbed/app.py", "file_text": "x = 1\nprint(x)\n"})),
        ("str_replace_editor", json!({"command": "str_replace", "path": "/testbed/app.py", "old_str": "x = 1", "new_str": "x = 41 + 1"})),
        ("str_replace_editor", json!({"command": "insert", "path": "/testbed/app.py", "insert_line": 0, "new_str": "# answer"})),
        ("str_replace_editor", json!({"command": "str_replace", "path": "/testbed/app.py", "old_str": "nope", "new_str": "x"})),
        ("str_replace_editor", json!({"command": "view", "path": "/testbed"})),
        ("execute_bash", json!({"command": "python3 /testbed/app.py | tee /testbed/output/answer.txt"})),
        ("submit", json!({})),
    ];
    let config = ToolConfig::default();
    for (i, (name, args)) in calls.into_iter().enumerate() {
        let outcome = dispatch(&mut sb, &ToolCall::new(format!("call-{i}"), name, args), &config).await?;
        let flag = if outcome.result.is_error { " (error)" } else { "" };
        println!("--- {name}{flag}\n{}\n", outcome.result.observation);
    }
    sb.destroy().await?;
    Ok(())
}
