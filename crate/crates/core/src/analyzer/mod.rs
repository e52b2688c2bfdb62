//! Trajectory analytics: capability usage, reasoning patterns in plain responses,
//! and token/time cost.

mod cost;
mod patterns;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{turn_log_lines, Trajectory, TurnLogLine, TurnRecord};

pub use cost::{cost_report, render_cost_table, CostRatios, CostReport, EpisodeCost, TokenTotals};
pub use patterns::{
    reasoning_counts, reasoning_summary, Category, PatternLibrary, PatternRule, ReasoningCounts, ReasoningSummary,
    RuleKind,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzerError {
    #[error("no trajectories to analyze")]
    EmptyInput,
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}: token or timing ledger missing")]
    MissingLedger(String),
    #[error("pattern library: {0}")]
    Library(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The turns of one episode as written in its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub task_id: String,
    pub turns: Vec<TurnLogLine>,
}

impl From<&Trajectory> for TrajectoryLog {
    fn from(t: &Trajectory) -> Self {
        Self { task_id: t.task_id.clone(), turns: turn_log_lines(t) }
    }
}

/// Reads a JSONL turn log. Errors name the offending line.
pub fn load_turn_log(path: &Path) -> Result<TrajectoryLog, AnalyzerError> {
    let text = std::fs::read_to_string(path)?;
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TurnLogLine = serde_json::from_str(line).map_err(|e| AnalyzerError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        turns.push(parsed);
    }
    let task_id = turns.first().map_or_else(
        || path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        |t| t.task_id.clone(),
    );
    Ok(TrajectoryLog { task_id, turns })
}

/// Code the model acted with: the bash command, or text written by the editor.
pub fn action_texts(tool: &str, arguments: &Value) -> Vec<String> {
    let field = |k: &str| arguments.get(k).and_then(Value::as_str).map(str::to_string);
    match tool {
        "execute_bash" => field("command").into_iter().collect(),
        "str_replace_editor" => ["file_text", "new_str"].iter().filter_map(|k| field(k)).collect(),
        _ => Vec::new(),
    }
}

fn line_texts(line: &TurnLogLine) -> Vec<String> {
    match (&line.tool, &line.arguments) {
        (Some(tool), Some(args)) => action_texts(tool, args),
        _ => Vec::new(),
    }
}

/// Categories with at least one matching rule in the turn's action.
pub fn classify_turn(turn: &TurnRecord, library: &PatternLibrary) -> Vec<Category> {
    let texts = turn.tool_calls.first().map(|c| action_texts(&c.name, &c.arguments_json())).unwrap_or_default();
    library.classify_texts(&texts)
}

pub fn classify_log_line(line: &TurnLogLine, library: &PatternLibrary) -> Vec<Category> {
    library.classify_texts(&line_texts(line))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryUsage {
    pub task_id: String,
    pub turns: usize,
    /// Turns with at least one match, per category.
    pub matched_turns: BTreeMap<Category, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub library_version: String,
    pub trajectories: usize,
    pub total_turns: usize,
    pub avg_turns: f64,
    pub matched_turns: BTreeMap<Category, usize>,
    /// Matched turns over total turns.
    pub rates: BTreeMap<Category, f64>,
    pub per_trajectory: Vec<TrajectoryUsage>,
}

pub fn usage_rates(logs: &[TrajectoryLog], library: &PatternLibrary) -> Result<UsageReport, AnalyzerError> {
    if logs.is_empty() {
        return Err(AnalyzerError::EmptyInput);
    }
    let zero = || Category::ALL.iter().map(|c| (*c, 0usize)).collect::<BTreeMap<_, _>>();
    let mut totals = zero();
    let mut per_trajectory = Vec::new();
    for log in logs {
        let mut counts = zero();
        for line in &log.turns {
            for c in classify_log_line(line, library) {
                *counts.entry(c).or_default() += 1;
                *totals.entry(c).or_default() += 1;
            }
        }
        per_trajectory.push(TrajectoryUsage { task_id: log.task_id.clone(), turns: log.turns.len(), matched_turns: counts });
    }
    let total_turns: usize = logs.iter().map(|l| l.turns.len()).sum();
    let rates = totals
        .iter()
        .map(|(c, n)| (*c, if total_turns == 0 { 0.0 } else { *n as f64 / total_turns as f64 }))
        .collect();
    Ok(UsageReport {
        library_version: library.version.clone(),
        trajectories: logs.len(),
        total_turns,
        avg_turns: total_turns as f64 / logs.len() as f64,
        matched_turns: totals,
        rates,
        per_trajectory,
    })
}

pub fn render_usage_table(report: &UsageReport) -> String {
    let mut out = format!(
        "capability usage (pattern library v{}, {} trajectories, {} turns, {:.2} turns/trajectory)\n",
        report.library_version, report.trajectories, report.total_turns, report.avg_turns
    );
    out.push_str(&format!("{:<20} {:>8} {:>8}\n", "category", "turns", "rate"));
    for (c, rate) in &report.rates {
        out.push_str(&format!("{:<20} {:>8} {:>7.1}%\n", c.as_str(), report.matched_turns[c], rate * 100.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn line(tool: &str, args: Value) -> TurnLogLine {
        TurnLogLine {
            schema_version: 1,
            task_id: "t".into(),
            turn: 0,
            tool: Some(tool.into()),
            arguments: Some(args),
            assistant_text: None,
            reasoning: None,
            observation: None,
            is_error: false,
            truncated: false,
            timed_out: false,
            prompt_tokens: 0,
            model_tokens: 0,
            env_tokens: 0,
            env_tokens_estimated: false,
            finish_reason: None,
            model_ms: 0,
            exec_ms: 0,
            wall_ms: 0,
            termination: None,
        }
    }

    #[test]
    fn usage_rate_is_matched_turns_over_total() {
        let lib = PatternLibrary::builtin();
        let turns = vec![
            line("execute_bash", json!({"command": "grep -n x f.txt"})),
            line("execute_bash", json!({"command": "echo hi"})),
            line("execute_bash", json!({"command": "cat f.txt | head"})),
            line("submit", json!({})),
        ];
        let report = usage_rates(&[TrajectoryLog { task_id: "t".into(), turns }], &lib).unwrap();
        assert_eq!(report.rates[&Category::FileManagement], 0.5);
        assert_eq!(report.rates[&Category::Computation], 0.0);
        assert_eq!(report.avg_turns, 4.0);
        assert!(matches!(usage_rates(&[], &lib), Err(AnalyzerError::EmptyInput)));
        assert!(render_usage_table(&report).contains("file-management"));
    }

    #[test]
    fn editor_contents_are_classified() {
        let lib = PatternLibrary::builtin();
        let l = line(
            "str_replace_editor",
            json!({"command": "create", "path": "/testbed/s.py", "file_text": "from scipy.optimize import fsolve\nwith open('x') as f:\n    pass\n"}),
        );
        assert_eq!(classify_log_line(&l, &lib), [Category::FileManagement, Category::Computation]);
        let view = line("str_replace_editor", json!({"command": "view", "path": "/testbed/s.py"}));
        assert!(classify_log_line(&view, &lib).is_empty());
    }
}
