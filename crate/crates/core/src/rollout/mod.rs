//! Runs task suites in sandbox or plain mode and writes a run directory:
//! `trajectories/<task>.jsonl`, `outputs/<task>/...`, `results.jsonl`, `summary.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::agent::{
    run_episode, run_plain, write_turn_log, AgentConfig, EpisodeInput, EpisodeResult, Termination, TimingLedger,
    TokenLedger, Trajectory,
};
use crate::analyzer::{load_turn_log, AnalyzerError, EpisodeCost, TrajectoryLog};
use crate::configurator::sha256_hex;
use crate::model::{ModelClient, ModelProfile};
use crate::rewards::{score_episode, EvaluatorRegistry, RewardOutcome, ScoringMode};
use crate::sandbox::{join_relative, SandboxFleet};
use crate::task::{render_plain_prompt, stage_task, TaskSpec};

pub const RUN_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("sandbox mode needs a sandbox fleet")]
    NoFleet,
    #[error("run directory {0} already holds a run")]
    RunDirExists(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sandbox,
    PlainLlm,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sandbox" => Ok(Mode::Sandbox),
            "plain-llm" | "plain" | "llm" => Ok(Mode::PlainLlm),
            other => Err(format!("unknown mode `{other}` (expected sandbox or plain-llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    pub concurrency: usize,
    pub scoring: ScoringMode,
    pub agent: AgentConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { mode: Mode::Sandbox, concurrency: 64, scoring: ScoringMode::Eval, agent: AgentConfig::default() }
    }
}

/// What every episode of a run shares.
#[derive(Clone)]
pub struct RunContext {
    pub fleet: Option<SandboxFleet>,
    pub model: Arc<dyn ModelClient>,
    pub profile: ModelProfile,
    pub evaluators: EvaluatorRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFileRow {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task_id: String,
    pub mode: Mode,
    pub sandbox_id: Option<String>,
    pub termination: Termination,
    pub turns: usize,
    pub extracted_answer: Option<String>,
    pub reward: Option<f64>,
    pub reward_detail: Option<String>,
    pub penalty_applied: bool,
    pub tokens: TokenLedger,
    pub timing: TimingLedger,
    pub output_files: Vec<OutputFileRow>,
    pub error: Option<String>,
}

/// A finished task: the row plus the full episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub row: ResultRow,
    pub result: EpisodeResult,
}

fn failed_trajectory(task_id: &str, termination: Termination, error: String) -> EpisodeResult {
    EpisodeResult {
        trajectory: Trajectory {
            task_id: task_id.to_string(),
            turns: Vec::new(),
            tokens: TokenLedger::default(),
            timing: TimingLedger::default(),
            termination,
            error: Some(error),
        },
        extracted_answer: None,
        output_files: Vec::new(),
        reward: None,
    }
}

/// Runs one task end to end: provision, stage, episode, extract, score, destroy.
pub async fn run_task(task: &TaskSpec, ctx: &RunContext, options: &RunOptions) -> TaskOutcome {
    let mut agent = options.agent.clone();
    if let Some(budget) = task.budget {
        agent.budget = budget;
    }
    let mut sandbox_id = None;
    let mut result = match options.mode {
        Mode::PlainLlm => {
            let prompt = render_plain_prompt(task);
            run_plain(&task.id, &prompt, ctx.model.as_ref(), &ctx.profile, &agent.budget).await
        }
        Mode::Sandbox => match &ctx.fleet {
            None => failed_trajectory(&task.id, Termination::SandboxError, RolloutError::NoFleet.to_string()),
            Some(fleet) => match fleet.create().await {
                Err(e) => failed_trajectory(&task.id, Termination::SandboxError, e.to_string()),
                Ok(mut sb) => {
                    sandbox_id = Some(sb.id().to_string());
                    let result = match stage_task(task, &mut sb).await {
                        Err(e) => failed_trajectory(&task.id, Termination::SandboxError, e.to_string()),
                        Ok(_) => {
                            let input = EpisodeInput::from_task(task);
                            run_episode(&input, &mut sb, ctx.model.as_ref(), &ctx.profile, &agent).await
                        }
                    };
                    if let Err(e) = sb.destroy().await {
                        tracing::warn!(task = %task.id, error = %e, "sandbox destroy failed");
                    }
                    result
                }
            },
        },
    };
    let reward = score_episode(&result, &task.answer_key, options.scoring, &ctx.evaluators);
    let (reward_value, detail, penalty, reward_error) = match reward {
        Ok(RewardOutcome { value, detail, penalty_applied, .. }) => (Some(value), Some(detail), penalty_applied, None),
        Err(e) => (None, None, false, Some(e.to_string())),
    };
    result.reward = reward_value;
    let row = ResultRow {
        task_id: task.id.clone(),
        mode: options.mode,
        sandbox_id,
        termination: result.trajectory.termination,
        turns: result.trajectory.turns.len(),
        extracted_answer: result.extracted_answer.clone(),
        reward: reward_value,
        reward_detail: detail,
        penalty_applied: penalty,
        tokens: result.trajectory.tokens,
        timing: result.trajectory.timing,
        output_files: result
            .output_files
            .iter()
            .map(|f| OutputFileRow { path: f.path.clone(), bytes: f.bytes.len(), sha256: sha256_hex(&f.bytes) })
            .collect(),
        error: result.trajectory.error.clone().or(reward_error),
    };
    TaskOutcome { row, result }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub layout_version: u32,
    pub mode: Mode,
    pub model: String,
    pub scoring: ScoringMode,
    pub tasks: usize,
    /// Tasks whose reward is exactly 1.
    pub correct: usize,
    pub accuracy: f64,
    pub mean_reward: f64,
    pub terminations: BTreeMap<String, usize>,
    pub started_unix_ms: u64,
    pub wall_clock_ms: u64,
    pub per_task: Vec<TaskScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub reward: Option<f64>,
}

/// File-system-safe stem for a task id.
pub fn task_file_stem(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    let stem = stem.trim_start_matches('.');
    if stem.is_empty() {
        format!("task_{}", &sha256_hex(id.as_bytes())[..12])
    } else if stem != id {
        format!("{stem}_{}", &sha256_hex(id.as_bytes())[..8])
    } else {
        stem.to_string()
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn write_outputs(run_dir: &Path, outcome: &TaskOutcome) -> std::io::Result<()> {
    let stem = task_file_stem(&outcome.row.task_id);
    write_turn_log(&outcome.result.trajectory, &run_dir.join("trajectories").join(format!("{stem}.jsonl")))?;
    for file in &outcome.result.output_files {
        let rel = file.path.trim_start_matches('/');
        let target = join_relative(&run_dir.join("outputs").join(&stem), rel)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(target, &file.bytes)?;
    }
    Ok(())
}

/// Runs every task with at most `options.concurrency` in flight and writes the run
/// directory. Rows and summary entries follow suite order.
pub async fn run_suite(
    tasks: &[TaskSpec],
    ctx: &RunContext,
    options: &RunOptions,
    run_dir: &Path,
) -> Result<(RunSummary, Vec<TaskOutcome>), RolloutError> {
    if run_dir.join("summary.json").exists() || run_dir.join("results.jsonl").exists() {
        return Err(RolloutError::RunDirExists(run_dir.to_path_buf()));
    }
    if options.mode == Mode::Sandbox && ctx.fleet.is_none() {
        return Err(RolloutError::NoFleet);
    }
    std::fs::create_dir_all(run_dir.join("trajectories"))?;
    std::fs::create_dir_all(run_dir.join("outputs"))?;
    let started_unix_ms = unix_ms();
    let started = Instant::now();
    let slots = Arc::new(Semaphore::new(options.concurrency.max(1)));
    let mut set = tokio::task::JoinSet::new();
    for (index, task) in tasks.iter().cloned().enumerate() {
        let (ctx, options, slots) = (ctx.clone(), options.clone(), slots.clone());
        set.spawn(async move {
            let _permit = slots.acquire_owned().await.expect("semaphore stays open");
            (index, run_task(&task, &ctx, &options).await)
        });
    }
    let mut outcomes: Vec<Option<TaskOutcome>> = vec![None; tasks.len()];
    while let Some(joined) = set.join_next().await {
        let (index, outcome) = joined.map_err(|e| std::io::Error::other(e.to_string()))?;
        write_outputs(run_dir, &outcome)?;
        outcomes[index] = Some(outcome);
    }
    let outcomes: Vec<TaskOutcome> = outcomes.into_iter().map(|o| o.expect("every task joined")).collect();
    let wall_clock_ms = started.elapsed().as_millis() as u64;

    let mut rows = String::new();
    for o in &outcomes {
        rows.push_str(&serde_json::to_string(&o.row).expect("rows serialize"));
        rows.push('\n');
    }
    std::fs::write(run_dir.join("results.jsonl"), rows)?;

    let mut terminations = BTreeMap::new();
    for o in &outcomes {
        let key = serde_json::to_value(o.row.termination).expect("serializes");
        *terminations.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    let rewards: Vec<f64> = outcomes.iter().map(|o| o.row.reward.unwrap_or(0.0)).collect();
    let correct = rewards.iter().filter(|r| **r == 1.0).count();
    let n = outcomes.len().max(1) as f64;
    let summary = RunSummary {
        layout_version: RUN_LAYOUT_VERSION,
        mode: options.mode,
        model: ctx.profile.model_name.clone(),
        scoring: options.scoring,
        tasks: outcomes.len(),
        correct,
        accuracy: correct as f64 / n,
        mean_reward: rewards.iter().sum::<f64>() / n,
        terminations,
        started_unix_ms,
        wall_clock_ms,
        per_task: outcomes.iter().map(|o| TaskScore { task_id: o.row.task_id.clone(), reward: o.row.reward }).collect(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(run_dir.join("summary.json"), text)?;
    Ok((summary, outcomes))
}

/// A run directory read back for analysis.
#[derive(Debug, Clone)]
pub struct RunLogs {
    pub summary: Option<RunSummary>,
    pub logs: Vec<TrajectoryLog>,
    pub costs: Vec<EpisodeCost>,
    pub wall_clock: Option<Duration>,
}

/// Reads a run directory, or a single turn-log file.
pub fn load_run(path: &Path) -> Result<RunLogs, AnalyzerError> {
    if path.is_file() {
        let log = load_turn_log(path)?;
        let cost = EpisodeCost::from_log(&log);
        return Ok(RunLogs { summary: None, logs: vec![log], costs: vec![cost], wall_clock: None });
    }
    let traj_dir = path.join("trajectories");
    if !traj_dir.is_dir() {
        return Err(AnalyzerError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no trajectories/ directory", path.display()),
        )));
    }
    let results = path.join("results.jsonl");
    let text = std::fs::read_to_string(&results)?;
    let mut logs = Vec::new();
    let mut costs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| AnalyzerError::Parse { path: results.display().to_string(), line: i + 1, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let task_id = value.get("task_id").and_then(|v| v.as_str()).unwrap_or("?").to_string();
        if value.get("tokens").is_none_or(|v| v.is_null()) || value.get("timing").is_none_or(|v| v.is_null()) {
            return Err(AnalyzerError::MissingLedger(task_id));
        }
        let row: ResultRow = serde_json::from_value(value).map_err(|e| parse(e.to_string()))?;
        let log_path = traj_dir.join(format!("{}.jsonl", task_file_stem(&row.task_id)));
        let mut log = load_turn_log(&log_path)?;
        log.task_id = row.task_id.clone();
        costs.push(EpisodeCost { task_id: row.task_id, tokens: row.tokens, timing: row.timing });
        logs.push(log);
    }
    let summary: Option<RunSummary> = match std::fs::read_to_string(path.join("summary.json")) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| AnalyzerError::Parse {
            path: path.join("summary.json").display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?),
        Err(_) => None,
    };
    let wall_clock = summary.as_ref().map(|s| Duration::from_millis(s.wall_clock_ms));
    Ok(RunLogs { summary, logs, costs, wall_clock })
}
