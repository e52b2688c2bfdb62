//! A full run: the toy suite in sandbox mode and in plain-llm mode, each written
//! to a run directory.
//!
//! cargo run --example rollout_suite

use std::sync::Arc;

use sandbox_rollout::model::ModelProfile;
use sandbox_rollout::rewards::EvaluatorRegistry;
use sandbox_rollout::rollout::{run_suite, Mode, RunContext, RunOptions};
use sandbox_rollout::sandbox::{NamespaceRuntime, SandboxConfig, SandboxFleet};
use sandbox_rollout::toy::{toy_suite, ToySolver};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    NamespaceRuntime::probe()?;
    let state = tempfile::tempdir()?;
    let fleet = SandboxFleet::new(Arc::new(NamespaceRuntime::new(state.path())?), SandboxConfig::default())?;
    let ctx = RunContext {
        fleet: Some(fleet),
        model: Arc::new(ToySolver),
        profile: ModelProfile::new("toy"),
        evaluators: EvaluatorRegistry::new(),
    };
    let out = tempfile::tempdir()?;
    for mode in [Mode::Sandbox, Mode::PlainLlm] {
        let dir = out.path().join(format!("{mode:?}").to_lowercase());
        let options = RunOptions { mode, concurrency: 4, ..Default::default() };
        let (summary, outcomes) = run_suite(&toy_suite(), &ctx, &options, &dir).await?;
        println!("{mode:?}: {}/{} correct in {} ms", summary.correct, summary.tasks, summary.wall_clock_ms);
        for o in &outcomes {
            println!("  {} turns={} answer={:?} reward={:?}", o.row.task_id, o.row.turns, o.row.extracted_answer, o.row.reward);
        }
    }
    Ok(())
}
