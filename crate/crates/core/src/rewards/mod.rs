//! Rule-based episode scoring.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeResult, Termination};
use crate::task::{AnswerKey, AnswerKind, Normalization};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("no evaluator registered as `{0}`")]
    UnknownEvaluator(String),
    #[error("comparator `{0}` is not defined")]
    ComparatorUndefined(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: f64,
    pub kind: AnswerKind,
    pub detail: String,
    pub penalty_applied: bool,
}

impl RewardOutcome {
    fn new(kind: AnswerKind, value: f64, detail: impl Into<String>) -> Self {
        Self { value: value.clamp(0.0, 1.0), kind, detail: detail.into(), penalty_applied: false }
    }
}

/// RL scoring zeroes episodes that did not submit; eval scores whatever answer exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    #[default]
    Rl,
    Eval,
}

fn normalize_text(text: &str, case_fold: bool) -> String {
    let t = text.trim();
    if case_fold {
        t.to_lowercase()
    } else {
        t.to_string()
    }
}

/// 1 when the trimmed texts match (case-insensitively with `case_fold`), or the
/// numbers match under `numeric`.
pub fn score_exact(answer: &str, gold: &str, normalization: &Normalization) -> f64 {
    if normalization.numeric {
        let cmp = Comparator::Numeric { tolerance: normalization.tolerance.unwrap_or(0.0) };
        return score_binary(answer, gold, &cmp).0;
    }
    let same = normalize_text(answer, normalization.case_fold) == normalize_text(gold, normalization.case_fold);
    f64::from(u8::from(same))
}

/// Option letters in a choice answer, uppercased, deduplicated and sorted.
/// Accepts "A", "(b)", "A, C", "A and C", and packed capitals like "ACD".
pub fn parse_options(text: &str) -> Vec<String> {
    let mut set = BTreeSet::new();
    for token in text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()) {
        if token.len() == 1 && token.chars().all(|c| c.is_ascii_alphabetic()) {
            set.insert(token.to_ascii_uppercase());
        } else if token.len() <= 10 && token.chars().all(|c| c.is_ascii_uppercase()) {
            let letters: BTreeSet<char> = token.chars().collect();
            if letters.len() == token.len() {
                set.extend(letters.into_iter().map(String::from));
            }
        }
    }
    set.into_iter().collect()
}

/// F1 between option sets; an empty side scores 0.
pub fn score_choice_f1<S: AsRef<str>>(answer: &[S], gold: &[S]) -> f64 {
    let a: BTreeSet<&str> = answer.iter().map(AsRef::as_ref).collect();
    let g: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let hit = a.intersection(&g).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / a.len() as f64;
    let r = hit / g.len() as f64;
    2.0 * p * r / (p + r)
}

/// Lowercased alphanumeric runs.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure over [`rouge_tokens`].
pub fn score_rouge_l(answer: &str, gold: &str) -> f64 {
    rouge_l_tokens(&rouge_tokens(answer), &rouge_tokens(gold))
}

pub fn rouge_l_tokens<T: PartialEq>(answer: &[T], gold: &[T]) -> f64 {
    if answer.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(answer, gold) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / answer.len() as f64;
    let r = lcs / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Reads a decimal, fraction ("1/2"), or percentage ("50%"). Thousands commas are dropped.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim().trim_end_matches('.').replace(',', "");
    let t = t.trim();
    if let Some(p) = t.strip_suffix('%') {
        return parse_number(p).map(|v| v / 100.0);
    }
    if let Some((n, d)) = t.split_once('/') {
        let (n, d) = (parse_plain(n)?, parse_plain(d)?);
        return (d != 0.0).then(|| n / d);
    }
    parse_plain(t)
}

fn parse_plain(t: &str) -> Option<f64> {
    let t = t.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.to_ascii_lowercase().contains("inf") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparator {
    Numeric { tolerance: f64 },
    Text { case_fold: bool },
}

impl Comparator {
    /// `numeric`, `text`, or `text-ci`.
    pub fn parse(name: &str, tolerance: Option<f64>) -> Result<Self, RewardError> {
        match name {
            "numeric" => Ok(Self::Numeric { tolerance: tolerance.unwrap_or(0.0) }),
            "text" => Ok(Self::Text { case_fold: false }),
            "text-ci" => Ok(Self::Text { case_fold: true }),
            other => Err(RewardError::ComparatorUndefined(other.to_string())),
        }
    }
}

/// 1 for correct, 0 otherwise, with a note when the answer could not be compared.
pub fn score_binary(answer: &str, gold: &str, comparator: &Comparator) -> (f64, Option<String>) {
    match *comparator {
        Comparator::Text { case_fold } => {
            let same = normalize_text(answer, case_fold) == normalize_text(gold, case_fold);
            (f64::from(u8::from(same)), None)
        }
        Comparator::Numeric { tolerance } => match (parse_number(answer), parse_number(gold)) {
            (Some(a), Some(g)) => {
                // Relative slack absorbs decimal rounding of fractions like 1/3.
                let slack = tolerance.max(1e-9 * g.abs().max(1.0));
                (f64::from(u8::from((a - g).abs() <= slack)), None)
            }
            (None, _) => (0.0, Some(format!("answer `{}` is not a number", answer.trim()))),
            (_, None) => (0.0, Some(format!("gold `{}` is not a number", gold.trim()))),
        },
    }
}

/// Scorer for `external` answer keys.
pub trait Evaluator: Send + Sync {
    /// Score in [0, 1] and a short explanation.
    fn evaluate(&self, answer: &str, key: &AnswerKey) -> (f64, String);
}

impl<F> Evaluator for F
where
    F: Fn(&str, &AnswerKey) -> (f64, String) + Send + Sync,
{
    fn evaluate(&self, answer: &str, key: &AnswerKey) -> (f64, String) {
        self(answer, key)
    }
}

#[derive(Clone, Default)]
pub struct EvaluatorRegistry {
    evaluators: HashMap<String, Arc<dyn Evaluator>>,
}

impl fmt::Debug for EvaluatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.evaluators.keys().collect();
        names.sort();
        f.debug_struct("EvaluatorRegistry").field("evaluators", &names).finish()
    }
}

impl EvaluatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, evaluator: impl Evaluator + 'static) -> &mut Self {
        self.evaluators.insert(name.into(), Arc::new(evaluator));
        self
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Evaluator>> {
        self.evaluators.get(name).cloned()
    }
}

/// Scores an answer against a key, ignoring how the episode ended.
pub fn score_answer(answer: &str, key: &AnswerKey, evaluators: &EvaluatorRegistry) -> Result<RewardOutcome, RewardError> {
    let gold = key.gold_text().unwrap_or_default();
    Ok(match key.kind {
        AnswerKind::Exact => {
            let v = score_exact(answer, &gold, &key.normalization);
            RewardOutcome::new(key.kind, v, if v == 1.0 { "exact match" } else { "mismatch" })
        }
        AnswerKind::SingleChoice | AnswerKind::MultiChoice => {
            let got = parse_options(answer);
            let want = key.gold_options();
            let v = if key.kind == AnswerKind::SingleChoice {
                f64::from(u8::from(got == want))
            } else {
                score_choice_f1(&got, &want)
            };
            RewardOutcome::new(key.kind, v, format!("answer {{{}}} gold {{{}}}", got.join(","), want.join(",")))
        }
        AnswerKind::FreeForm => {
            let v = score_rouge_l(answer, &gold);
            RewardOutcome::new(key.kind, v, format!("rouge-l {v:.4}"))
        }
        AnswerKind::External => {
            let name = key.evaluator.clone().unwrap_or_default();
            let evaluator = evaluators.get(&name).ok_or(RewardError::UnknownEvaluator(name))?;
            let (v, detail) = evaluator.evaluate(answer, key);
            RewardOutcome::new(key.kind, if v.is_nan() { 0.0 } else { v }, detail)
        }
    })
}

/// Reward for a finished episode.
pub fn score_episode(
    result: &EpisodeResult,
    key: &AnswerKey,
    mode: ScoringMode,
    evaluators: &EvaluatorRegistry,
) -> Result<RewardOutcome, RewardError> {
    let termination = result.trajectory.termination;
    if key.kind == AnswerKind::External && evaluators.get(key.evaluator.as_deref().unwrap_or("")).is_none() {
        return Err(RewardError::UnknownEvaluator(key.evaluator.clone().unwrap_or_default()));
    }
    if mode == ScoringMode::Rl && termination != Termination::Submitted {
        return Ok(RewardOutcome {
            value: 0.0,
            kind: key.kind,
            detail: format!("episode ended by {termination:?} without submitting"),
            penalty_applied: true,
        });
    }
    match &result.extracted_answer {
        None => Ok(RewardOutcome::new(key.kind, 0.0, "no answer file")),
        Some(answer) => score_answer(answer, key, evaluators),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Gold;

    #[test]
    fn exact_examples() {
        let n = Normalization::default();
        assert_eq!(score_exact("42", "42", &n), 1.0);
        assert_eq!(score_exact(" 42\n", "42", &n), 1.0);
        assert_eq!(score_exact("41", "42", &n), 0.0);
        assert_eq!(score_exact("B", "b", &n), 0.0);
        assert_eq!(score_exact("B", "b", &Normalization { case_fold: true, ..n }), 1.0);
    }

    #[test]
    fn option_parsing() {
        assert_eq!(parse_options("A, C"), ["A", "C"]);
        assert_eq!(parse_options("(b)"), ["B"]);
        assert_eq!(parse_options("C and A"), ["A", "C"]);
        assert_eq!(parse_options("ACD"), ["A", "C", "D"]);
        assert_eq!(parse_options("The answer"), Vec::<String>::new());
        assert_eq!(parse_options("A,A"), ["A"]);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(score_choice_f1(&["A", "C"], &["A", "C"]), 1.0);
        assert!((score_choice_f1(&["A"], &["A", "C"]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_choice_f1(&["B"], &["A"]), 0.0);
        assert_eq!(score_choice_f1::<&str>(&[], &["A"]), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(score_rouge_l("the cat", "The CAT!"), 1.0);
        assert_eq!(score_rouge_l("dog", "cat"), 0.0);
        assert!((score_rouge_l("the cat sat", "the cat ran") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_rouge_l("", "x"), 0.0);
    }

    #[test]
    fn numbers() {
        let cmp = Comparator::Numeric { tolerance: 0.0 };
        assert_eq!(score_binary("0.5", "1/2", &cmp).0, 1.0);
        assert_eq!(score_binary("50%", "1/2", &cmp).0, 1.0);
        assert_eq!(score_binary("1,000", "1000", &cmp).0, 1.0);
        assert_eq!(score_binary("7", "8", &cmp).0, 0.0);
        let (v, note) = score_binary("seven", "7", &cmp);
        assert_eq!(v, 0.0);
        assert!(note.unwrap().contains("not a number"));
        assert_eq!(parse_number("1/0"), None);
        assert_eq!(score_binary("3.14", "3.14159", &Comparator::Numeric { tolerance: 0.01 }).0, 1.0);
        assert!(matches!(Comparator::parse("fuzzy", None), Err(RewardError::ComparatorUndefined(_))));
    }

    #[test]
    fn answer_dispatch() {
        let reg = EvaluatorRegistry::new();
        let key = AnswerKey {
            kind: AnswerKind::MultiChoice,
            gold: Some(Gold::Options(vec!["A".into(), "C".into()])),
            normalization: Normalization::default(),
            evaluator: None,
        };
        let out = score_answer("A", &key, &reg).unwrap();
        assert!((out.value - 2.0 / 3.0).abs() < 1e-12);
        let single = AnswerKey { kind: AnswerKind::SingleChoice, gold: Some(Gold::Text("b".into())), ..key.clone() };
        assert_eq!(score_answer("(B)", &single, &reg).unwrap().value, 1.0);
        assert_eq!(score_answer("B, C", &single, &reg).unwrap().value, 0.0);

        let ext = AnswerKey { kind: AnswerKind::External, gold: None, evaluator: Some("len".into()), ..key };
        assert!(matches!(score_answer("x", &ext, &reg), Err(RewardError::UnknownEvaluator(_))));
        let mut reg = EvaluatorRegistry::new();
        reg.register("len", |a: &str, _: &AnswerKey| (a.len() as f64, "length".to_string()));
        assert_eq!(score_answer("abc", &ext, &reg).unwrap().value, 1.0);
    }
}
