//! One agent episode driven by a scripted model, with its turn log and reward.
//!
//! cargo run --example scripted_episode

use std::sync::Arc;

use sandbox_rollout::agent::{run_episode, turn_log_lines, AgentConfig, EpisodeInput};
use sandbox_rollout::model::{ModelProfile, ModelTurn, ScriptedModel};
use sandbox_rollout::rewards::{score_episode, EvaluatorRegistry, ScoringMode};
use sandbox_rollout::sandbox::{NamespaceRuntime, SandboxConfig, SandboxFleet};
use sandbox_rollout::task::{AnswerKey, TaskSpec};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    NamespaceRuntime::probe()?;
    let state = tempfile::tempdir()?;
    let fleet = SandboxFleet::new(Arc::new(NamespaceRuntime::new(state.path())?), SandboxConfig::default())?;

    let task = TaskSpec::new("primes", "How many primes are below 100?", AnswerKey::exact("25"));
    let model = ScriptedModel::new([
        ModelTurn::text("I will count them with a quick script."),
        ModelTurn::call(
            "c1",
            "execute_bash",
            json!({"command": "python3 -c 'print(sum(all(n % d for d in range(2, n)) for n in range(2, 100)))' > /testbed/output/answer.txt"}),
        ),
        ModelTurn::call("c2", "submit", json!({})),
    ]);

    let mut sb = fleet.create().await?;
    let result = run_episode(&EpisodeInput::from_task(&task), &mut sb, &model, &ModelProfile::new("scripted"), &AgentConfig::default()).await;
    sb.destroy().await?;

    for line in turn_log_lines(&result.trajectory) {
        println!("{}", serde_json::to_string(&line)?);
    }
    let reward = score_episode(&result, &task.answer_key, ScoringMode::Rl, &EvaluatorRegistry::new())?;
    let t = &result.trajectory;
    println!("\ntermination {:?}, answer {:?}, reward {}", t.termination, result.extracted_answer, reward.value);
    println!("tokens: prompt {} model {} env {}", t.tokens.prompt_tokens, t.tokens.model_tokens, t.tokens.env_tokens);
    Ok(())
}
