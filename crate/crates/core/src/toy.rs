//! A five-task arithmetic suite and a deterministic solver for it.
//!
//! Good for smoke runs: the solver needs no network, touches all three tools in
//! sandbox mode, and answers in one turn in plain mode.

use std::sync::OnceLock;

use async_trait::async_trait;
use regex::Regex;
use serde_json::json;

use crate::model::{Message, ModelClient, ModelError, ModelProfile, ModelRequest, ModelTurn};
use crate::task::{AnswerKey, TaskSpec};

const PROBLEMS: [(i64, char, i64); 5] = [(17, '*', 23), (1024, '-', 377), (96, '/', 8), (58, '+', 67), (13, '*', 13)];

fn apply(a: i64, op: char, b: i64) -> Option<i64> {
    match op {
        '+' => a.checked_add(b),
        '-' => a.checked_sub(b),
        '*' => a.checked_mul(b),
        '/' if b != 0 && a % b == 0 => Some(a / b),
        _ => None,
    }
}

/// Five exact-match arithmetic tasks, `toy-1` to `toy-5`.
pub fn toy_suite() -> Vec<TaskSpec> {
    PROBLEMS
        .iter()
        .enumerate()
        .map(|(i, &(a, op, b))| {
            let gold = apply(a, op, b).expect("toy problems are well formed");
            TaskSpec::new(format!("toy-{}", i + 1), format!("What is {a} {op} {b}?"), AnswerKey::exact(gold.to_string()))
        })
        .collect()
}

fn problem(text: &str) -> Option<(i64, char, i64)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"What is (-?\d+) ([-+*/]) (-?\d+)\?").unwrap());
    let caps = re.captures_iter(text).last()?;
    Some((caps[1].parse().ok()?, caps[2].chars().next()?, caps[3].parse().ok()?))
}

/// Solves toy-suite prompts.
///
/// With tools offered it computes the answer with python in the sandbox, views the
/// answer file, then submits. Without tools it replies `Answer: N` straight away.
#[derive(Debug, Clone, Default)]
pub struct ToySolver;

#[async_trait]
impl ModelClient for ToySolver {
    async fn complete(&self, _profile: &ModelProfile, request: &ModelRequest) -> Result<ModelTurn, ModelError> {
        let prompt = request
            .messages
            .iter()
            .filter_map(|m| match m {
                Message::User { content } => Some(content.as_str()),
                _ => None,
            })
            .next()
            .unwrap_or_default();
        let Some((a, op, b)) = problem(prompt) else {
            return Err(ModelError::Script("toy solver: no arithmetic problem in the prompt".into()));
        };
        if request.tools.is_none() {
            let answer = apply(a, op, b).map_or("unknown".to_string(), |n| n.to_string());
            return Ok(ModelTurn::text(format!("{a} {op} {b} = {answer}\nAnswer: {answer}")));
        }
        let done = request.messages.iter().filter(|m| matches!(m, Message::Tool { .. })).count();
        let py_op = if op == '/' { "//".to_string() } else { op.to_string() };
        Ok(match done {
            0 => ModelTurn::call(
                "toy-1",
                "execute_bash",
                json!({ "command": format!("python3 -c 'print({a} {py_op} {b})' > /testbed/output/answer.txt") }),
            )
            .with_text("Let me compute it."),
            1 => ModelTurn::call("toy-2", "str_replace_editor", json!({ "command": "view", "path": "/testbed/output/answer.txt" })),
            _ => ModelTurn::call("toy-3", "submit", json!({})),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_valid_and_solver_parses_it() {
        for task in toy_suite() {
            task.validate().unwrap();
            assert!(problem(&task.prompt).is_some());
        }
        assert_eq!(toy_suite()[2].answer_key.gold_text().as_deref(), Some("12"));
    }

    #[tokio::test]
    async fn plain_reply_carries_the_answer() {
        let task = &toy_suite()[0];
        let request = ModelRequest { messages: vec![Message::user(crate::task::render_plain_prompt(task))], ..Default::default() };
        let turn = ToySolver.complete(&ModelProfile::new("toy"), &request).await.unwrap();
        assert_eq!(crate::task::plain_answer(turn.text.as_deref().unwrap()).as_deref(), Some("391"));
    }
}
