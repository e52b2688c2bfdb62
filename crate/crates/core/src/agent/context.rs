use serde_json::Value;

use super::{EpisodeInput, TurnRecord};
use crate::model::{Message, ModelRequest};
use crate::tokens::estimate_tokens;

/// Replaces old observations when the context would not fit the trajectory budget.
pub const ELISION_MARKER: &str = "<earlier observation elided to fit the context budget>";

/// Estimated size of a request's messages.
pub fn request_tokens(request: &ModelRequest) -> u64 {
    request
        .messages
        .iter()
        .flat_map(Message::context_parts)
        .map(|p| estimate_tokens(&p))
        .sum()
}

fn message_tokens(m: &Message) -> u64 {
    m.context_parts().iter().map(|p| estimate_tokens(p)).sum()
}

/// Request for the next turn: prompts, then each past turn's assistant message and
/// observations. Oldest observations are elided first when the estimate exceeds
/// `max_tokens`; the prompts and the latest turn are always kept whole.
/// Returns the request and whether anything was elided.
pub fn build_turn_context(
    input: &EpisodeInput,
    turns: &[TurnRecord],
    tools: Option<Value>,
    max_tokens: u64,
) -> (ModelRequest, bool) {
    let mut messages = vec![Message::system(&input.system_prompt), Message::user(&input.instance_prompt)];
    // Indices of observation messages, oldest first, excluding the latest turn.
    let mut elidable = Vec::new();
    for (n, turn) in turns.iter().enumerate() {
        messages.push(Message::Assistant { content: turn.assistant_text.clone(), tool_calls: turn.tool_calls.clone() });
        for result in &turn.results {
            if n + 1 < turns.len() {
                elidable.push(messages.len());
            }
            if turn.tool_calls.is_empty() {
                messages.push(Message::user(&result.observation));
            } else {
                messages.push(Message::Tool { tool_call_id: result.call_id.clone(), content: result.observation.clone() });
            }
        }
    }
    let mut total: u64 = messages.iter().map(message_tokens).sum();
    let mut elided = false;
    for i in elidable {
        if total <= max_tokens {
            break;
        }
        let before = message_tokens(&messages[i]);
        match &mut messages[i] {
            Message::Tool { content, .. } | Message::User { content } => *content = ELISION_MARKER.to_string(),
            _ => continue,
        }
        total = total - before + message_tokens(&messages[i]);
        elided = true;
    }
    (ModelRequest { messages, tools, max_tokens: None }, elided)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{ToolCall, ToolResult};
    use proptest::prelude::*;
    use serde_json::json;

    fn turn(i: usize, obs_len: usize) -> TurnRecord {
        let id = format!("c{i}");
        TurnRecord {
            index: i as u32,
            tool_calls: vec![ToolCall::new(&id, "execute_bash", json!({"command": "ls"}))],
            results: vec![ToolResult {
                call_id: id,
                observation: "x ".repeat(obs_len),
                is_error: false,
                truncated: false,
                timed_out: false,
                wall_ms: 0,
                env_token_estimate: 0,
            }],
            ..Default::default()
        }
    }

    fn input() -> EpisodeInput {
        EpisodeInput { task_id: "t".into(), system_prompt: "sys".into(), instance_prompt: "do it".into() }
    }

    #[test]
    fn keeps_everything_when_it_fits() {
        let turns: Vec<_> = (0..3).map(|i| turn(i, 10)).collect();
        let (req, elided) = build_turn_context(&input(), &turns, None, 10_000);
        assert!(!elided);
        assert_eq!(req.messages.len(), 2 + 3 * 2);
        assert!(req.messages.iter().all(|m| !m.context_parts().iter().any(|p| p == ELISION_MARKER)));
    }

    #[test]
    fn elides_oldest_first() {
        let turns: Vec<_> = (0..4).map(|i| turn(i, 500)).collect();
        let (req, elided) = build_turn_context(&input(), &turns, None, 1_200);
        assert!(elided);
        assert_eq!(req.messages[3], Message::Tool { tool_call_id: "c0".into(), content: ELISION_MARKER.into() });
        let last = req.messages.last().unwrap();
        assert_ne!(last.context_parts()[0], ELISION_MARKER);
    }

    proptest! {
        #[test]
        fn bounded_when_latest_turn_fits(sizes in proptest::collection::vec(0usize..800, 1..30), budget in 900u64..5_000) {
            let turns: Vec<_> = sizes.iter().enumerate().map(|(i, &n)| turn(i, n)).collect();
            let (req, _) = build_turn_context(&input(), &turns, None, budget);
            let fixed: u64 = req.messages[..2].iter().map(message_tokens).sum::<u64>()
                + req.messages[req.messages.len() - 2..].iter().map(message_tokens).sum::<u64>();
            let per_turn_floor = turns.len() as u64 * 40;
            if fixed + per_turn_floor <= budget {
                prop_assert!(request_tokens(&req) <= budget);
            }
            prop_assert_eq!(req.messages.len(), 2 + 2 * turns.len());
        }
    }
}
