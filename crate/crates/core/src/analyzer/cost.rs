use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AnalyzerError, TrajectoryLog};
use crate::agent::{TimingLedger, TokenLedger, Trajectory};

/// Ledgers of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeCost {
    pub task_id: String,
    pub tokens: TokenLedger,
    pub timing: TimingLedger,
}

impl From<&Trajectory> for EpisodeCost {
    fn from(t: &Trajectory) -> Self {
        Self { task_id: t.task_id.clone(), tokens: t.tokens, timing: t.timing }
    }
}

impl EpisodeCost {
    /// Ledgers summed from a turn log; overhead is not logged per turn and counts as zero.
    pub fn from_log(log: &TrajectoryLog) -> Self {
        let mut tokens = TokenLedger::default();
        let mut timing = TimingLedger::default();
        for t in &log.turns {
            tokens.prompt_tokens += t.prompt_tokens;
            tokens.model_tokens += t.model_tokens;
            tokens.env_tokens += t.env_tokens;
            timing.model_ms += t.model_ms;
            timing.exec_ms += t.exec_ms;
        }
        Self { task_id: log.task_id.clone(), tokens, timing }
    }

    pub fn total_ms(&self) -> u64 {
        self.timing.model_ms + self.timing.exec_ms + self.timing.overhead_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt_tokens: u64,
    pub model_tokens: u64,
    pub env_tokens: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    /// This run's QPM over the baseline's.
    pub qpm_ratio: f64,
    /// Mean tokens per query over the baseline's.
    pub token_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub queries: usize,
    pub per_task: Vec<EpisodeCost>,
    pub totals: TokenTotals,
    pub env_fraction: f64,
    pub exec_time_fraction: f64,
    pub wall_clock_ms: u64,
    /// Completed queries per minute of wall clock.
    pub qpm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<CostRatios>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Aggregate token and time cost. `wall_clock` spans submission of the first query to
/// the last answer; without it the episodes are taken to have run back to back.
pub fn cost_report(
    episodes: &[EpisodeCost],
    wall_clock: Option<Duration>,
    baseline: Option<&CostReport>,
) -> Result<CostReport, AnalyzerError> {
    if episodes.is_empty() {
        return Err(AnalyzerError::EmptyInput);
    }
    let mut totals = TokenTotals::default();
    for e in episodes {
        totals.prompt_tokens += e.tokens.prompt_tokens;
        totals.model_tokens += e.tokens.model_tokens;
        totals.env_tokens += e.tokens.env_tokens;
    }
    totals.total = totals.prompt_tokens + totals.model_tokens + totals.env_tokens;
    let exec_ms: u64 = episodes.iter().map(|e| e.timing.exec_ms).sum();
    let total_ms: u64 = episodes.iter().map(EpisodeCost::total_ms).sum();
    let wall_clock_ms = wall_clock.map_or(total_ms, |d| d.as_millis() as u64);
    let qpm = ratio(episodes.len() as f64 * 60_000.0, wall_clock_ms as f64);
    let mut report = CostReport {
        queries: episodes.len(),
        per_task: episodes.to_vec(),
        totals,
        env_fraction: ratio(totals.env_tokens as f64, totals.total as f64),
        exec_time_fraction: ratio(exec_ms as f64, total_ms as f64).min(1.0),
        wall_clock_ms,
        qpm,
        baseline: None,
    };
    if let Some(base) = baseline {
        let per_query = |r: &CostReport| ratio(r.totals.total as f64, r.queries as f64);
        report.baseline = Some(CostRatios {
            qpm_ratio: ratio(report.qpm, base.qpm),
            token_ratio: ratio(per_query(&report), per_query(base)),
        });
    }
    Ok(report)
}

pub fn render_cost_table(report: &CostReport) -> String {
    let t = &report.totals;
    let mut out = format!("cost over {} queries\n", report.queries);
    out.push_str(&format!(
        "tokens: prompt {} + model {} + env {} = {}\n",
        t.prompt_tokens, t.model_tokens, t.env_tokens, t.total
    ));
    out.push_str(&format!("env token fraction: {:.3}\n", report.env_fraction));
    out.push_str(&format!("exec time fraction: {:.3}\n", report.exec_time_fraction));
    out.push_str(&format!("qpm: {:.2} ({} ms wall clock)\n", report.qpm, report.wall_clock_ms));
    if let Some(b) = &report.baseline {
        out.push_str(&format!("qpm ratio vs baseline: {:.3}x\n", b.qpm_ratio));
        out.push_str(&format!("token ratio vs baseline: {:.3}x\n", b.token_ratio));
    }
    out
}
