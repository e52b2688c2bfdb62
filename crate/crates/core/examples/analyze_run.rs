//! Capability usage, reasoning and cost reports over a finished run, with a
//! plain-llm run as the cost baseline.
//!
//! cargo run --example analyze_run

use std::sync::Arc;

use sandbox_rollout::analyzer::{cost_report, render_cost_table, render_usage_table, usage_rates, PatternLibrary};
use sandbox_rollout::model::ModelProfile;
use sandbox_rollout::rewards::EvaluatorRegistry;
use sandbox_rollout::rollout::{load_run, run_suite, Mode, RunContext, RunOptions};
use sandbox_rollout::sandbox::{NamespaceRuntime, SandboxConfig, SandboxFleet};
use sandbox_rollout::toy::{toy_suite, ToySolver};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    NamespaceRuntime::probe()?;
    let state = tempfile::tempdir()?;
    let fleet = SandboxFleet::new(Arc::new(NamespaceRuntime::new(state.path())?), SandboxConfig::default())?;
    let ctx = RunContext { fleet: Some(fleet), model: Arc::new(ToySolver), profile: ModelProfile::new("toy"), evaluators: EvaluatorRegistry::new() };
    let out = tempfile::tempdir()?;
    let (sandbox_dir, plain_dir) = (out.path().join("sandbox"), out.path().join("plain"));
    run_suite(&toy_suite(), &ctx, &RunOptions::default(), &sandbox_dir).await?;
    run_suite(&toy_suite(), &ctx, &RunOptions { mode: Mode::PlainLlm, ..Default::default() }, &plain_dir).await?;

    let run = load_run(&sandbox_dir)?;
    let base = load_run(&plain_dir)?;
    let library = PatternLibrary::builtin();
    println!("{}", render_usage_table(&usage_rates(&run.logs, &library)?));
    let baseline = cost_report(&base.costs, base.wall_clock, None)?;
    println!("{}", render_cost_table(&cost_report(&run.costs, run.wall_clock, Some(&baseline))?));

    for cmd in ["pip install numpy", "cat data.csv | head", "python3 -c 'for i in range(10**6): pass'", "ls"] {
        let hits: Vec<_> = library.classify_texts(&[cmd.to_string()]).iter().map(|c| c.as_str()).collect();
        println!("{cmd:<45} {hits:?}");
    }
    Ok(())
}
