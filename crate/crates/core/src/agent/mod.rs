//! The episode loop: model turn, tool dispatch, observation, until submit or budget.

mod context;
mod log;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{Message, ModelClient, ModelProfile, ModelRequest};
use crate::sandbox::Sandbox;
use crate::task::{extract_answer, plain_answer};
use crate::tokens::estimate_tokens;
use crate::tools::{dispatch, tools_json, ToolCall, ToolConfig, ToolResult};

pub use context::{build_turn_context, request_tokens, ELISION_MARKER};
pub use log::{turn_log_lines, write_turn_log, TurnLogLine};

pub const DEFAULT_MAX_TURNS: u32 = 100;
pub const DEFAULT_TURN_TOKENS: u64 = 65_536;
pub const DEFAULT_TRAJECTORY_TOKENS: u64 = 65_536;
pub const LONG_CONTEXT_TRAJECTORY_TOKENS: u64 = 131_072;
pub const DEFAULT_ANSWER_PATH: &str = "/testbed/output/answer.txt";

/// Reminder sent when a turn has no tool call.
pub const NO_TOOL_CALL_REMINDER: &str = "No tool call was found in your last response. Continue the task by calling one of the tools: execute_bash, str_replace_editor, or submit when you are done.";
/// Observation for extra tool calls in one turn; only the first is run.
pub const EXTRA_CALL_NOTICE: &str = "Only one tool call is executed per turn; this call was skipped. Issue it again in a separate turn.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeBudget {
    pub max_turns: u32,
    pub max_output_tokens_per_turn: u64,
    pub max_trajectory_tokens: u64,
}

impl Default for EpisodeBudget {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            max_output_tokens_per_turn: DEFAULT_TURN_TOKENS,
            max_trajectory_tokens: DEFAULT_TRAJECTORY_TOKENS,
        }
    }
}

impl EpisodeBudget {
    /// Budget for long-context tasks.
    pub fn long_context() -> Self {
        Self { max_trajectory_tokens: LONG_CONTEXT_TRAJECTORY_TOKENS, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 || self.max_output_tokens_per_turn == 0 || self.max_trajectory_tokens == 0 {
            return Err("budget values must be positive".into());
        }
        if self.max_trajectory_tokens < self.max_output_tokens_per_turn {
            return Err(format!(
                "max_trajectory_tokens ({}) must be at least max_output_tokens_per_turn ({})",
                self.max_trajectory_tokens, self.max_output_tokens_per_turn
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Submitted,
    TurnBudget,
    TokenBudget,
    ModelError,
    SandboxError,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    /// One result per tool call; a reminder result when there was no call.
    pub results: Vec<ToolResult>,
    /// Initial prompt tokens; non-zero on the first turn only.
    pub prompt_tokens: u64,
    pub model_tokens: u64,
    pub env_tokens: u64,
    /// Environment tokens came from the tokenizer-free estimate rather than provider usage.
    pub env_tokens_estimated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    pub model_ms: u64,
    pub exec_ms: u64,
}

impl TurnRecord {
    pub fn tool_name(&self) -> Option<&str> {
        self.tool_calls.first().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenLedger {
    pub prompt_tokens: u64,
    pub model_tokens: u64,
    pub env_tokens: u64,
}

impl TokenLedger {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.model_tokens + self.env_tokens
    }

    pub fn from_turns(turns: &[TurnRecord]) -> Self {
        turns.iter().fold(Self::default(), |acc, t| Self {
            prompt_tokens: acc.prompt_tokens + t.prompt_tokens,
            model_tokens: acc.model_tokens + t.model_tokens,
            env_tokens: acc.env_tokens + t.env_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimingLedger {
    pub model_ms: u64,
    pub exec_ms: u64,
    pub overhead_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub turns: Vec<TurnRecord>,
    pub tokens: TokenLedger,
    pub timing: TimingLedger,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub extracted_answer: Option<String>,
    pub output_files: Vec<OutputFile>,
    pub reward: Option<f64>,
}

/// Episode settings that do not come from the task.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub budget: EpisodeBudget,
    pub tools: ToolConfig,
    pub answer_path: PathBuf,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            budget: EpisodeBudget::default(),
            tools: ToolConfig::default(),
            answer_path: PathBuf::from(DEFAULT_ANSWER_PATH),
        }
    }
}

/// Prompts for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInput {
    pub task_id: String,
    pub system_prompt: String,
    pub instance_prompt: String,
}

impl EpisodeInput {
    /// Prompts rendered from a task.
    pub fn from_task(task: &crate::task::TaskSpec) -> Self {
        let (system_prompt, instance_prompt) = crate::task::render_prompts(task);
        Self { task_id: task.id.clone(), system_prompt, instance_prompt }
    }
}

/// Observation appended when a turn carries no tool call.
pub fn handle_no_tool_call(call_id: &str) -> ToolResult {
    ToolResult {
        call_id: call_id.to_string(),
        observation: NO_TOOL_CALL_REMINDER.to_string(),
        is_error: true,
        truncated: false,
        timed_out: false,
        wall_ms: 0,
        env_token_estimate: estimate_tokens(NO_TOOL_CALL_REMINDER),
    }
}

fn skipped_call(call: &ToolCall) -> ToolResult {
    ToolResult {
        call_id: call.id.clone(),
        observation: EXTRA_CALL_NOTICE.to_string(),
        is_error: true,
        truncated: false,
        timed_out: false,
        wall_ms: 0,
        env_token_estimate: estimate_tokens(EXTRA_CALL_NOTICE),
    }
}

fn estimated_env(results: &[ToolResult]) -> u64 {
    results.iter().map(|r| r.env_token_estimate).sum()
}

struct Loop {
    turns: Vec<TurnRecord>,
    /// Provider prompt tokens seen on the previous call, and whether that request was elided.
    last_prompt: Option<(u64, bool)>,
    model_ms: u64,
    exec_ms: u64,
}

impl Loop {
    fn used_tokens(&self) -> u64 {
        TokenLedger::from_turns(&self.turns).total()
    }
}

/// Runs one sandbox episode to completion. Never fails: model and sandbox
/// failures end the episode with the matching termination.
pub async fn run_episode(
    input: &EpisodeInput,
    sandbox: &mut Sandbox,
    model: &dyn ModelClient,
    profile: &ModelProfile,
    config: &AgentConfig,
) -> EpisodeResult {
    let started = Instant::now();
    let budget = config.budget;
    let tools = tools_json();
    let mut state = Loop { turns: Vec::new(), last_prompt: None, model_ms: 0, exec_ms: 0 };
    let mut error = None;
    let termination = loop {
        if state.turns.len() as u32 >= budget.max_turns {
            break Termination::TurnBudget;
        }
        let (mut request, elided) = build_turn_context(input, &state.turns, Some(tools.clone()), budget.max_trajectory_tokens);
        let used = if state.turns.is_empty() { request_tokens(&request) } else { state.used_tokens() };
        let remaining = budget.max_trajectory_tokens.saturating_sub(used);
        if remaining == 0 {
            break Termination::TokenBudget;
        }
        request.max_tokens = Some(remaining.min(budget.max_output_tokens_per_turn));
        let cap = request.max_tokens.unwrap_or(budget.max_output_tokens_per_turn);

        let turn_started = Instant::now();
        let reply = model.complete(profile, &request).await;
        let model_ms = turn_started.elapsed().as_millis() as u64;
        state.model_ms += model_ms;
        let turn = match reply {
            Ok(turn) => turn,
            Err(err) => {
                error = Some(err.to_string());
                break Termination::ModelError;
            }
        };

        // The growth of the provider's prompt count since the last call is what the
        // environment added, when nothing was elided in between.
        if let (Some(usage), Some(prev)) = (turn.usage, state.turns.last_mut()) {
            if let Some((prev_prompt, prev_elided)) = state.last_prompt {
                let grown = usage.prompt_tokens.checked_sub(prev_prompt + prev.model_tokens);
                if let (Some(delta), false, false) = (grown, prev_elided, elided) {
                    prev.env_tokens = delta;
                    prev.env_tokens_estimated = false;
                }
            }
        }

        let index = state.turns.len() as u32;
        let prompt_tokens = if index == 0 {
            turn.usage.map_or_else(|| request_tokens(&request), |u| u.prompt_tokens)
        } else {
            0
        };
        let model_tokens = turn.usage.map_or_else(
            || {
                estimate_tokens(turn.text.as_deref().unwrap_or(""))
                    + estimate_tokens(turn.reasoning.as_deref().unwrap_or(""))
                    + turn
                        .tool_calls
                        .iter()
                        .map(|c| estimate_tokens(&c.name) + estimate_tokens(&c.arguments_json().to_string()))
                        .sum::<u64>()
            },
            |u| u.completion_tokens,
        );
        state.last_prompt = turn.usage.map(|u| (u.prompt_tokens, elided));
        let mut record = TurnRecord {
            index,
            assistant_text: turn.text.clone(),
            reasoning: turn.reasoning.clone(),
            tool_calls: turn.tool_calls.clone(),
            results: Vec::new(),
            prompt_tokens,
            model_tokens,
            env_tokens: 0,
            env_tokens_estimated: true,
            finish_reason: turn.finish_reason.clone(),
            model_ms,
            exec_ms: 0,
        };

        let overflow = model_tokens > cap || turn.finish_reason.as_deref() == Some("length");
        if overflow {
            state.turns.push(record);
            break Termination::TokenBudget;
        }

        let exec_started = Instant::now();
        let mut submitted = false;
        let mut failure = None;
        match turn.tool_calls.split_first() {
            None => record.results.push(handle_no_tool_call(&format!("turn-{index}"))),
            Some((first, rest)) => {
                match dispatch(sandbox, first, &config.tools).await {
                    Ok(outcome) => {
                        submitted = outcome.submitted;
                        record.results.push(outcome.result);
                    }
                    Err(err) => failure = Some(err.to_string()),
                }
                record.results.extend(rest.iter().map(skipped_call));
            }
        }
        record.exec_ms = exec_started.elapsed().as_millis() as u64;
        state.exec_ms += record.exec_ms;
        record.env_tokens = estimated_env(&record.results);
        state.turns.push(record);
        if let Some(err) = failure {
            error = Some(err);
            break Termination::SandboxError;
        }
        if submitted {
            break Termination::Submitted;
        }
    };

    let extract_started = Instant::now();
    let extracted_answer = extract_answer(sandbox, &config.answer_path).await.ok().flatten();
    let output_files = sandbox
        .collect_files(&sandbox.config().output_dir)
        .await
        .unwrap_or_default()
        .into_iter()
        .map(|(path, bytes)| OutputFile { path, bytes })
        .collect();
    state.exec_ms += extract_started.elapsed().as_millis() as u64;

    let total_ms = started.elapsed().as_millis() as u64;
    let tokens = TokenLedger::from_turns(&state.turns);
    EpisodeResult {
        trajectory: Trajectory {
            task_id: input.task_id.clone(),
            turns: state.turns,
            tokens,
            timing: TimingLedger {
                model_ms: state.model_ms,
                exec_ms: state.exec_ms,
                overhead_ms: total_ms.saturating_sub(state.model_ms + state.exec_ms),
            },
            termination,
            error,
        },
        extracted_answer,
        output_files,
        reward: None,
    }
}

/// Plain generation: one request, no tools, answer taken from the response text.
pub async fn run_plain(
    task_id: &str,
    prompt: &str,
    model: &dyn ModelClient,
    profile: &ModelProfile,
    budget: &EpisodeBudget,
) -> EpisodeResult {
    let started = Instant::now();
    let request = ModelRequest {
        messages: vec![Message::user(prompt)],
        tools: None,
        max_tokens: Some(budget.max_output_tokens_per_turn),
    };
    let reply = model.complete(profile, &request).await;
    let model_ms = started.elapsed().as_millis() as u64;
    let (turns, termination, error, answer) = match reply {
        Err(err) => (Vec::new(), Termination::ModelError, Some(err.to_string()), None),
        Ok(turn) => {
            let text = turn.text.clone().unwrap_or_default();
            let model_tokens = turn.usage.map_or_else(|| estimate_tokens(&text), |u| u.completion_tokens);
            let record = TurnRecord {
                index: 0,
                assistant_text: turn.text.clone(),
                reasoning: turn.reasoning.clone(),
                prompt_tokens: turn.usage.map_or_else(|| request_tokens(&request), |u| u.prompt_tokens),
                model_tokens,
                env_tokens_estimated: false,
                finish_reason: turn.finish_reason.clone(),
                model_ms,
                ..Default::default()
            };
            let overflow = model_tokens > budget.max_output_tokens_per_turn
                || turn.finish_reason.as_deref() == Some("length");
            let termination = if overflow { Termination::TokenBudget } else { Termination::Submitted };
            (vec![record], termination, None, plain_answer(&text))
        }
    };
    let total_ms = started.elapsed().as_millis() as u64;
    EpisodeResult {
        trajectory: Trajectory {
            task_id: task_id.to_string(),
            tokens: TokenLedger::from_turns(&turns),
            turns,
            timing: TimingLedger { model_ms, exec_ms: 0, overhead_ms: total_ms.saturating_sub(model_ms) },
            termination,
            error,
        },
        extracted_answer: answer,
        output_files: Vec::new(),
        reward: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rules() {
        assert_eq!(EpisodeBudget::default().max_turns, 100);
        assert_eq!(EpisodeBudget::long_context().max_trajectory_tokens, 131_072);
        assert!(EpisodeBudget::default().validate().is_ok());
        let bad = EpisodeBudget { max_trajectory_tokens: 10, max_output_tokens_per_turn: 20, max_turns: 1 };
        assert!(bad.validate().is_err());
        assert!(EpisodeBudget { max_turns: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ledger_sums() {
        let turns = vec![
            TurnRecord { prompt_tokens: 100, model_tokens: 10, env_tokens: 5, ..Default::default() },
            TurnRecord { model_tokens: 20, env_tokens: 7, ..Default::default() },
        ];
        let ledger = TokenLedger::from_turns(&turns);
        assert_eq!(ledger, TokenLedger { prompt_tokens: 100, model_tokens: 30, env_tokens: 12 });
        assert_eq!(ledger.total(), 142);
    }
}
