use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Termination, Trajectory};

pub const TURN_LOG_VERSION: u32 = 1;

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLogLine {
    pub schema_version: u32,
    pub task_id: String,
    pub turn: u32,
    pub tool: Option<String>,
    pub arguments: Option<Value>,
    pub assistant_text: Option<String>,
    pub reasoning: Option<String>,
    pub observation: Option<String>,
    pub is_error: bool,
    pub truncated: bool,
    pub timed_out: bool,
    pub prompt_tokens: u64,
    pub model_tokens: u64,
    pub env_tokens: u64,
    pub env_tokens_estimated: bool,
    pub finish_reason: Option<String>,
    pub model_ms: u64,
    pub exec_ms: u64,
    pub wall_ms: u64,
    /// Set on the last line only.
    pub termination: Option<Termination>,
}

pub fn turn_log_lines(trajectory: &Trajectory) -> Vec<TurnLogLine> {
    let last = trajectory.turns.len().saturating_sub(1);
    trajectory
        .turns
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let call = t.tool_calls.first();
            let result = t.results.first();
            TurnLogLine {
                schema_version: TURN_LOG_VERSION,
                task_id: trajectory.task_id.clone(),
                turn: t.index,
                tool: call.map(|c| c.name.clone()),
                arguments: call.map(|c| c.arguments_json()),
                assistant_text: t.assistant_text.clone(),
                reasoning: t.reasoning.clone(),
                observation: result.map(|r| r.observation.clone()),
                is_error: result.is_some_and(|r| r.is_error),
                truncated: result.is_some_and(|r| r.truncated),
                timed_out: result.is_some_and(|r| r.timed_out),
                prompt_tokens: t.prompt_tokens,
                model_tokens: t.model_tokens,
                env_tokens: t.env_tokens,
                env_tokens_estimated: t.env_tokens_estimated,
                finish_reason: t.finish_reason.clone(),
                model_ms: t.model_ms,
                exec_ms: t.exec_ms,
                wall_ms: t.model_ms + t.exec_ms,
                termination: (n == last).then_some(trajectory.termination),
            }
        })
        .collect()
}

/// Writes one JSON object per turn.
pub fn write_turn_log(trajectory: &Trajectory, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in turn_log_lines(trajectory) {
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
