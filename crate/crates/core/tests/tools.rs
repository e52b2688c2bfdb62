mod common;

use std::time::Duration;

use proptest::prelude::*;
use sandbox_rollout::sandbox::{truncation_marker, Sandbox};
use sandbox_rollout::tools::{dispatch, tools_json, ToolCall, ToolConfig, ToolResult};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const GOLDEN: &str = include_str!("../resources/tool_schemas.json");

#[test]
fn tool_schemas_match_golden_bytes() {
    let rendered = serde_json::to_string_pretty(&tools_json()).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/resources/tool_schemas.json"), &rendered).unwrap();
        return;
    }
    assert_eq!(rendered, GOLDEN);
    assert_eq!(tools_json(), tools_json());
    let tools = tools_json();
    let names: Vec<&str> = tools
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["function"]["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["execute_bash", "str_replace_editor", "submit"]);
}

async fn call(sb: &mut Sandbox, name: &str, args: Value) -> ToolResult {
    let outcome = dispatch(sb, &ToolCall::new("call-1", name, args), &ToolConfig::default())
        .await
        .unwrap();
    outcome.result
}

async fn editor(sb: &mut Sandbox, args: Value) -> ToolResult {
    call(sb, "str_replace_editor", args).await
}

/// Digest of every file under the workspace, paths included.
async fn workspace_digest(sb: &Sandbox) -> String {
    let mut hasher = Sha256::new();
    for (path, bytes) in sb.collect_files("/testbed").await.unwrap() {
        hasher.update(path.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    format!("{:x}", hasher.finalize())
}

#[tokio::test]
async fn bash_tool_examples() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    let r = call(&mut sb, "execute_bash", json!({"command": "echo hi"})).await;
    assert_eq!(r.observation, "hi\n");
    assert!(!r.is_error && !r.timed_out);
    assert_eq!(r.call_id, "call-1");
    assert!(r.env_token_estimate >= 1);

    let r = call(&mut sb, "execute_bash", json!({})).await;
    assert!(r.is_error);
    assert!(r.observation.contains("command"));

    let r = call(&mut sb, "execute_bash", json!({"command": "ls /nope"})).await;
    assert!(!r.is_error);
    assert!(r.observation.contains("No such file"));
    assert!(r.observation.ends_with("<exit status 2>"));

    let r = call(&mut sb, "execute_bash", json!({"command": "true"})).await;
    assert_eq!(r.observation, "<no output>");

    let r = call(&mut sb, "execute_bash", json!({"command": "continue"})).await;
    assert!(r.is_error);
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn bash_tool_pending_directives() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    let config = ToolConfig { soft_timeout: Duration::from_secs(1), ..Default::default() };
    let run = |cmd: &str| ToolCall::new("c", "execute_bash", json!({ "command": cmd }));

    let r = dispatch(&mut sb, &run("sleep 1.5; echo done"), &config).await.unwrap().result;
    assert!(r.timed_out);
    assert!(r.observation.contains("`continue`"));
    let r = dispatch(&mut sb, &run("echo other"), &config).await.unwrap().result;
    assert!(r.is_error);
    let r = dispatch(&mut sb, &run("continue"), &config).await.unwrap().result;
    assert_eq!(r.observation, "done\n");
    assert!(!r.timed_out);

    let r = dispatch(&mut sb, &run("sleep 60"), &config).await.unwrap().result;
    assert!(r.timed_out);
    let r = dispatch(&mut sb, &run("interrupt"), &config).await.unwrap().result;
    assert!(r.observation.contains("interrupted"), "{}", r.observation);
    let r = dispatch(&mut sb, &run("echo ok"), &config).await.unwrap().result;
    assert_eq!(r.observation, "ok\n");
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn bash_observations_respect_the_bound() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    let config = ToolConfig { output_limit: 4096, ..Default::default() };
    let c = ToolCall::new("c", "execute_bash", json!({"command": "seq 1 100000; (exit 3)"}));
    let r = dispatch(&mut sb, &c, &config).await.unwrap().result;
    assert!(r.truncated);
    assert!(r.observation.len() <= 4096 + truncation_marker(u64::MAX).len());
    assert!(r.observation.ends_with("<exit status 3>"));

    sb.write_file("/testbed/big.txt", "line\n".repeat(10_000).as_bytes()).await.unwrap();
    let c = ToolCall::new("c", "str_replace_editor", json!({"command": "view", "path": "/testbed/big.txt"}));
    let r = dispatch(&mut sb, &c, &config).await.unwrap().result;
    assert!(r.truncated);
    assert!(r.observation.len() <= 4096 + truncation_marker(u64::MAX).len());
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn editor_view_examples() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    sb.write_file("/testbed/f.txt", b"one\ntwo\nthree\n").await.unwrap();
    let r = editor(&mut sb, json!({"command": "view", "path": "/testbed/f.txt"})).await;
    assert_eq!(
        r.observation,
        "Here's the result of running `cat -n` on /testbed/f.txt:\n     1\tone\n     2\ttwo\n     3\tthree\n"
    );
    let again = editor(&mut sb, json!({"command": "view", "path": "/testbed/f.txt"})).await;
    assert_eq!(again.observation, r.observation);

    let r = editor(&mut sb, json!({"command": "view", "path": "/testbed/f.txt", "view_range": [2, 2]})).await;
    assert!(r.observation.ends_with(":\n     2\ttwo\n"));

    sb.write_file("/testbed/d1/d2/d3.txt", b"deep").await.unwrap();
    sb.write_file("/testbed/d1/d2/d3/deeper.txt", b"deeper").await.unwrap();
    sb.write_file("/testbed/.hidden/x", b"x").await.unwrap();
    let r = editor(&mut sb, json!({"command": "view", "path": "/testbed"})).await;
    let listed: Vec<&str> = r.observation.lines().skip(1).collect();
    assert!(listed.contains(&"/testbed/d1/"));
    assert!(listed.contains(&"/testbed/d1/d2/"));
    assert!(!listed.iter().any(|l| l.contains("d3")));
    assert!(!listed.iter().any(|l| l.contains("hidden")));

    let r = editor(&mut sb, json!({"command": "view", "path": "/testbed/missing"})).await;
    assert!(r.is_error);
    let r = editor(&mut sb, json!({"command": "view", "path": "relative.txt"})).await;
    assert!(r.is_error);
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn editor_create_examples() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    let text = "tab\there\nünïcode\n\n";
    let r = editor(&mut sb, json!({"command": "create", "path": "/testbed/new/a.py", "file_text": text})).await;
    assert!(!r.is_error, "{}", r.observation);
    assert_eq!(sb.read_file("/testbed/new/a.py").await.unwrap(), text.as_bytes());
    let before = workspace_digest(&sb).await;
    let r = editor(&mut sb, json!({"command": "create", "path": "/testbed/new/a.py", "file_text": "x"})).await;
    assert!(r.is_error);
    assert_eq!(workspace_digest(&sb).await, before);
    let r = editor(&mut sb, json!({"command": "create", "path": "/testbed/empty", "file_text": ""})).await;
    assert!(!r.is_error);
    assert_eq!(sb.read_file("/testbed/empty").await.unwrap(), b"");
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn editor_str_replace_examples() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    sb.write_file("/testbed/f", b"a\nb\nc").await.unwrap();
    let r = editor(&mut sb, json!({"command": "str_replace", "path": "/testbed/f", "old_str": "b", "new_str": "B"})).await;
    assert!(!r.is_error, "{}", r.observation);
    assert!(r.observation.contains("     2\tB"));
    assert_eq!(sb.read_file("/testbed/f").await.unwrap(), b"a\nB\nc");

    sb.write_file("/testbed/dup", b"block\nx\nblock\n").await.unwrap();
    let before = workspace_digest(&sb).await;
    let r = editor(&mut sb, json!({"command": "str_replace", "path": "/testbed/dup", "old_str": "block", "new_str": "y"})).await;
    assert!(r.is_error);
    assert!(r.observation.contains("[1, 3]"));
    let r = editor(&mut sb, json!({"command": "str_replace", "path": "/testbed/dup", "old_str": "zzz", "new_str": "y"})).await;
    assert!(r.is_error);
    let r = editor(&mut sb, json!({"command": "str_replace", "path": "/testbed/nope", "old_str": "a", "new_str": "y"})).await;
    assert!(r.is_error);
    let r = editor(&mut sb, json!({"command": "str_replace", "path": "/testbed/dup", "old_str": "x", "new_str": "x"})).await;
    assert!(!r.is_error);
    assert_eq!(workspace_digest(&sb).await, before);
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn editor_insert_examples() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    sb.write_file("/testbed/f", b"x").await.unwrap();
    let r = editor(&mut sb, json!({"command": "insert", "path": "/testbed/f", "insert_line": 0, "new_str": "y"})).await;
    assert!(!r.is_error, "{}", r.observation);
    assert_eq!(sb.read_file("/testbed/f").await.unwrap(), b"y\nx");
    let r = editor(&mut sb, json!({"command": "insert", "path": "/testbed/f", "insert_line": 2, "new_str": "z"})).await;
    assert!(!r.is_error);
    assert_eq!(sb.read_file("/testbed/f").await.unwrap(), b"y\nx\nz");
    let before = workspace_digest(&sb).await;
    let r = editor(&mut sb, json!({"command": "insert", "path": "/testbed/f", "insert_line": 4, "new_str": "w"})).await;
    assert!(r.is_error);
    assert!(r.observation.contains("[0, 3]"));
    assert_eq!(workspace_digest(&sb).await, before);
    sb.destroy().await.unwrap();
}

#[tokio::test]
async fn submit_is_terminal_and_side_effect_free() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let mut sb = fleet.create().await.unwrap().into_inner();
    let before = workspace_digest(&sb).await;
    let outcome = dispatch(&mut sb, &ToolCall::new("c", "submit", json!({"stray": true})), &ToolConfig::default())
        .await
        .unwrap();
    assert!(outcome.submitted);
    assert!(!outcome.result.is_error);
    assert_eq!(workspace_digest(&sb).await, before);
    sb.destroy().await.unwrap();
}

fn arbitrary_call() -> impl Strategy<Value = Value> {
    let path = prop_oneof![
        Just(json!("/testbed/f.txt")),
        Just(json!("/testbed/sub")),
        Just(json!("/testbed/none.txt")),
        Just(json!("f.txt")),
        Just(json!(7)),
    ];
    let text = prop_oneof![Just(json!("a")), Just(json!("b\n")), Just(json!("")), Just(json!(null)), Just(json!(1))];
    let cmd = prop_oneof![
        Just(json!("view")),
        Just(json!("create")),
        Just(json!("str_replace")),
        Just(json!("insert")),
        Just(json!("undo_edit")),
    ];
    let line = prop_oneof![Just(json!(0)), Just(json!(3)), Just(json!(99)), Just(json!(-2)), Just(json!("x"))];
    (cmd, path, text.clone(), text, line).prop_map(|(c, p, a, b, l)| {
        json!({"command": c, "path": p, "old_str": a, "new_str": b, "file_text": b, "insert_line": l})
    })
}

#[test]
fn rejected_editor_calls_leave_workspace_unchanged() {
    let Some((fleet, _rt, _dir)) = common::fleet() else { return };
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let sb = rt.block_on(async {
        let sb = fleet.create().await.unwrap().into_inner();
        sb.write_file("/testbed/f.txt", b"a\nb\na\nc\n").await.unwrap();
        sb.write_file("/testbed/sub/g.txt", b"g").await.unwrap();
        std::cell::RefCell::new(sb)
    });
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(48));
    runner
        .run(&arbitrary_call(), |args| {
            let mut sb = sb.borrow_mut();
            let sb = &mut *sb;
            rt.block_on(async {
                let before = workspace_digest(sb).await;
                let c = ToolCall::new("c", "str_replace_editor", args.clone());
                let valid = c.validate().is_ok();
                let r = dispatch(sb, &c, &ToolConfig::default()).await.unwrap().result;
                if !valid {
                    prop_assert!(r.is_error);
                }
                if r.is_error {
                    prop_assert_eq!(workspace_digest(sb).await, before, "{} changed files: {}", args, r.observation);
                } else if valid {
                    prop_assert!(!r.observation.contains("Missing required parameter"));
                }
                // undo anything that did succeed so each case starts from the same tree
                sb.write_file("/testbed/f.txt", b"a\nb\na\nc\n").await.unwrap();
                sb.exec_command("rm -f /testbed/none.txt /testbed/sub/none.txt", Duration::from_secs(5), 1024).await.unwrap();
                Ok(())
            })
        })
        .unwrap();
    rt.block_on(async { sb.borrow_mut().destroy().await.unwrap() });
}
