use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sandbox-rollout"));
    for (key, _) in std::env::vars() {
        if key.starts_with("SANDBOX_ROLLOUT_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn dataset(path: &Path, n: usize) {
    let mut text = String::new();
    for i in 0..n {
        let body = format!("# Intro\nRecord {i} begins here.\n\n# Facts\nThe code for record {i} is {}.\n", i * 7);
        let record = json!({
            "id": format!("rec{i}"),
            "context": [{ "title": format!("Report {i}"), "text": body }],
            "subtasks": [
                { "question": format!("What is the code for record {i}?"), "answer": (i * 7).to_string() },
                { "question": "Double it.", "answer": (i * 14).to_string() }
            ]
        });
        text.push_str(&record.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn genenv_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    dataset(&data, 10);
    let gen = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        ok(&bin().args(["genenv", "--dataset"]).arg(&data).args(["--seed", seed, "--distractors", "3", "--out"]).arg(&out).output().unwrap());
        std::fs::read(out.join("tasks.jsonl")).unwrap()
    };
    let a = gen("a", "1");
    let b = gen("b", "1");
    assert_eq!(a, b);
    let lines = String::from_utf8(a.clone()).unwrap();
    assert!(lines.lines().count() >= 10);
    assert_ne!(gen("c", "2"), a);
    let manifest_a = std::fs::read(dir.path().join("a/manifest.json")).unwrap();
    assert_eq!(manifest_a, std::fs::read(dir.path().join("b/manifest.json")).unwrap());
}

#[test]
fn genenv_without_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["genenv", "--dataset", "/no/such/file.jsonl", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.jsonl"));
}

#[test]
fn run_then_analyze_with_a_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    let stdout = ok(&bin().args(["run", "--toy", "--backend", "toy", "--mode", "plain-llm", "--out"]).arg(&plain).output().unwrap());
    assert!(stdout.contains("5 correct"), "{stdout}");
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(plain.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["accuracy"], 1.0);

    let report = ok(&bin().arg("analyze").arg(&plain).output().unwrap());
    assert!(report.contains("capability usage") && report.contains("env token fraction"));
    assert!(!report.contains("ratio vs baseline"));
    let report = ok(&bin().arg("analyze").arg(&plain).arg("--baseline").arg(&plain).output().unwrap());
    assert!(report.contains("qpm ratio vs baseline: 1.000x"), "{report}");
    assert!(report.contains("token ratio vs baseline: 1.000x"));

    let json = ok(&bin().arg("analyze").arg(&plain).arg("--json").output().unwrap());
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["usage"]["total_turns"], 5);
}

#[test]
fn analyze_names_the_corrupt_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&bin().args(["run", "--toy", "--backend", "toy", "--mode", "plain-llm", "--out"]).arg(&run).output().unwrap());
    let log = run.join("trajectories/toy-2.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"truncated\n");
    std::fs::write(&log, text).unwrap();
    let out = bin().arg("analyze").arg(&run).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("toy-2.jsonl") && err.contains("line 2"), "{err}");
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    std::fs::write(&config, "backend = \"toy\"\nmode = \"plain-llm\"\nscoring = \"nonsense\"\n").unwrap();

    // The file's bad scoring value is used when nothing overrides it.
    let out = bin().arg("--config").arg(&config).args(["run", "--toy", "--out"]).arg(dir.path().join("r0")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));

    // The environment overrides the file.
    let r1 = dir.path().join("r1");
    ok(&bin().arg("--config").arg(&config).env("SANDBOX_ROLLOUT_SCORING", "rl").args(["run", "--toy", "--out"]).arg(&r1).output().unwrap());
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(r1.join("summary.json")).unwrap()).unwrap();
    assert_eq!((s["scoring"].as_str(), s["mode"].as_str()), (Some("rl"), Some("plain-llm")));

    // A flag overrides both.
    let r2 = dir.path().join("r2");
    ok(&bin()
        .arg("--config")
        .arg(&config)
        .env("SANDBOX_ROLLOUT_SCORING", "rl")
        .args(["run", "--toy", "--scoring", "eval", "--out"])
        .arg(&r2)
        .output()
        .unwrap());
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(r2.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["scoring"], "eval");

    std::fs::write(&config, "colour = \"red\"\n").unwrap();
    let out = bin().arg("--config").arg(&config).args(["run", "--toy"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn unreachable_model_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--toy", "--mode", "plain-llm", "--profile", "gpt-5", "--endpoint", "http://127.0.0.1:9/v1", "--out"])
        .arg(dir.path().join("r"))
        .env("SANDBOX_ROLLOUT_PROFILES", "/dev/null")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toy-1: model-error"));
}
