#![allow(dead_code)]

use std::sync::Arc;

use sandbox_rollout::sandbox::{NamespaceRuntime, SandboxConfig, SandboxFleet};

/// A namespace-backed fleet rooted in a private temp dir, or `None` when the
/// machine cannot host namespace sandboxes.
pub fn fleet() -> Option<(SandboxFleet, Arc<NamespaceRuntime>, tempfile::TempDir)> {
    fleet_with(SandboxConfig { network_enabled: false, ..Default::default() })
}

pub fn fleet_with(config: SandboxConfig) -> Option<(SandboxFleet, Arc<NamespaceRuntime>, tempfile::TempDir)> {
    if let Err(err) = NamespaceRuntime::probe() {
        eprintln!("skipping: namespace sandboxes unavailable ({err})");
        return None;
    }
    let dir = tempfile::Builder::new().prefix("sbx-state").tempdir_in("/var/tmp").unwrap();
    let runtime = Arc::new(NamespaceRuntime::new(dir.path()).unwrap());
    let fleet = SandboxFleet::new(runtime.clone(), config).unwrap();
    Some((fleet, runtime, dir))
}

pub mod schema;

use sandbox_rollout::model::{FnModel, Message, ModelTurn};
use sandbox_rollout::task::{AnswerKey, TaskSpec};

/// Tasks for the isolation audit; each prompt names its own marker.
pub fn isolation_tasks(n: usize) -> Vec<TaskSpec> {
    (0..n)
        .map(|i| TaskSpec::new(format!("iso-{i}"), format!("Marker: iso{i}x"), AnswerKey::exact(format!("iso{i}x"))))
        .collect()
}

/// Drops a secret in /tmp and the output dir, then records everything it can see.
pub fn isolation_model() -> FnModel {
    FnModel::new(|_, request| {
        let prompt = request
            .messages
            .iter()
            .find_map(|m| match m {
                Message::User { content } => Some(content.clone()),
                _ => None,
            })
            .unwrap_or_default();
        let marker = prompt.split("Marker: ").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or("none").to_string();
        let done = request.messages.iter().filter(|m| matches!(m, Message::Tool { .. })).count();
        Ok(match done {
            0 => ModelTurn::call(
                "c1",
                "execute_bash",
                serde_json::json!({ "command": format!(
                    "echo {marker} > /tmp/secret-{marker} && echo {marker} > /testbed/output/answer.txt && echo {marker} > /testbed/input/mine-{marker}"
                ) }),
            ),
            1 => ModelTurn::call(
                "c2",
                "execute_bash",
                serde_json::json!({ "command": "ls -a /tmp /testbed/input /testbed/output /testbed/documents > /testbed/output/seen.txt 2>&1; cat /tmp/secret-* >> /testbed/output/seen.txt" }),
            ),
            _ => ModelTurn::call("c3", "submit", serde_json::json!({})),
        })
    })
}

/// Markers of other tasks that show up in `seen`; empty when isolated.
pub fn foreign_markers(own: usize, total: usize, seen: &str) -> Vec<String> {
    let words: std::collections::BTreeSet<&str> =
        seen.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()).collect();
    (0..total).filter(|&j| j != own).map(|j| format!("iso{j}x")).filter(|m| words.contains(m.as_str())).collect()
}
