//! Chat-completions model access with tool calling.

mod http;
mod profile;
mod scripted;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::tools::{ToolArguments, ToolCall};

pub use http::{HttpModelClient, RetryPolicy};
pub use profile::{load_profile, ModelProfile, ProfileRegistry, DEFAULT_ENDPOINT, DEFAULT_MAX_OUTPUT_TOKENS};
pub use scripted::{FnModel, ScriptedModel};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode model response: {0}")]
    Decode(String),
    #[error("scripted model: {0}")]
    Script(String),
}

impl ModelError {
    /// Worth retrying: network trouble, rate limits, server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            ModelError::Transport(_) => true,
            ModelError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum Message {
    System { content: String },
    User { content: String },
    Assistant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        tool_calls: Vec<ToolCall>,
    },
    Tool { tool_call_id: String, content: String },
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message::System { content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::User { content: content.into() }
    }

    /// Text the message contributes to the context, for size estimates.
    pub fn context_parts(&self) -> Vec<String> {
        match self {
            Message::System { content } | Message::User { content } => vec![content.clone()],
            Message::Tool { content, .. } => vec![content.clone()],
            Message::Assistant { content, tool_calls } => {
                let mut parts: Vec<String> = content.iter().cloned().collect();
                for call in tool_calls {
                    parts.push(call.name.clone());
                    parts.push(call.arguments_json().to_string());
                }
                parts
            }
        }
    }

    fn to_wire(&self) -> Value {
        match self {
            Message::System { content } => json!({"role": "system", "content": content}),
            Message::User { content } => json!({"role": "user", "content": content}),
            Message::Tool { tool_call_id, content } => {
                json!({"role": "tool", "tool_call_id": tool_call_id, "content": content})
            }
            Message::Assistant { content, tool_calls } => {
                let mut m = Map::new();
                m.insert("role".into(), json!("assistant"));
                m.insert("content".into(), content.clone().map(Value::String).unwrap_or(Value::Null));
                if !tool_calls.is_empty() {
                    let calls: Vec<Value> = tool_calls
                        .iter()
                        .map(|c| {
                            let arguments = match &c.arguments {
                                ToolArguments::Parsed(map) => Value::Object(map.clone()).to_string(),
                                ToolArguments::Malformed { raw, .. } => raw.clone(),
                            };
                            json!({
                                "id": c.id,
                                "type": "function",
                                "function": {"name": c.name, "arguments": arguments},
                            })
                        })
                        .collect();
                    m.insert("tool_calls".into(), Value::Array(calls));
                }
                Value::Object(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    /// Chat-completions `tools` array; `None` for plain generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Value>,
    /// Cap for this request, below the profile's when the trajectory budget is nearly spent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Vendor reasoning trace, when the endpoint returns one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    /// `None` when the provider reported no usage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelTurn {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: Some(text.into()), ..Default::default() }
    }

    pub fn call(id: impl Into<String>, name: &str, arguments: Value) -> Self {
        Self { tool_calls: vec![ToolCall::new(id, name, arguments)], ..Default::default() }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.usage = Some(Usage { prompt_tokens, completion_tokens });
        self
    }

    pub fn assistant_message(&self) -> Message {
        Message::Assistant { content: self.text.clone(), tool_calls: self.tool_calls.clone() }
    }
}

#[async_trait]
pub trait ModelClient: Send + Sync {
    async fn complete(&self, profile: &ModelProfile, request: &ModelRequest) -> Result<ModelTurn, ModelError>;
}

/// Request body for `POST /chat/completions`.
pub fn request_body(profile: &ModelProfile, request: &ModelRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(profile.model_name));
    body.insert(
        "messages".into(),
        Value::Array(request.messages.iter().map(Message::to_wire).collect()),
    );
    if let Some(tools) = &request.tools {
        body.insert("tools".into(), tools.clone());
        body.insert("tool_choice".into(), json!("auto"));
    }
    body.insert("temperature".into(), json!(profile.temperature));
    if let Some(v) = profile.top_p {
        body.insert("top_p".into(), json!(v));
    }
    if let Some(v) = profile.top_k {
        body.insert("top_k".into(), json!(v));
    }
    if let Some(v) = profile.min_p {
        body.insert("min_p".into(), json!(v));
    }
    if let Some(v) = profile.repetition_penalty {
        body.insert("repetition_penalty".into(), json!(v));
    }
    let max_tokens = request
        .max_tokens
        .map_or(profile.max_output_tokens, |m| m.min(profile.max_output_tokens));
    body.insert("max_tokens".into(), json!(max_tokens));
    if let Some(budget) = profile.thinking_budget {
        body.insert("thinking".into(), json!({"type": "enabled", "budget_tokens": budget}));
    }
    Value::Object(body)
}

/// Parses a chat-completions response body.
pub fn parse_response(body: &Value, latency: Duration) -> Result<ModelTurn, ModelError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| ModelError::Decode("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| ModelError::Decode("choice has no message".into()))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let reasoning = ["reasoning_content", "reasoning"]
        .iter()
        .find_map(|k| message.get(*k).and_then(Value::as_str))
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let function = call
                .get("function")
                .ok_or_else(|| ModelError::Decode("tool call without function".into()))?;
            let name = function.get("name").and_then(Value::as_str).unwrap_or_default();
            let id = call
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            let call = match function.get("arguments") {
                Some(Value::String(raw)) => ToolCall::from_raw(id, name, raw),
                Some(other) => ToolCall::new(id, name, other.clone()),
                None => ToolCall::new(id, name, Value::Null),
            };
            tool_calls.push(call);
        }
    }
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    let finish_reason = choice.get("finish_reason").and_then(Value::as_str).map(str::to_string);
    Ok(ModelTurn {
        text,
        reasoning,
        tool_calls,
        usage,
        finish_reason,
        latency_ms: latency.as_millis() as u64,
    })
}

/// A response body carrying `turn`, as a conforming endpoint would send it.
pub fn response_body(turn: &ModelTurn) -> Value {
    let mut message = match turn.assistant_message().to_wire() {
        Value::Object(m) => m,
        _ => unreachable!("assistant messages are objects"),
    };
    if let Some(r) = &turn.reasoning {
        message.insert("reasoning_content".into(), json!(r));
    }
    let finish = turn
        .finish_reason
        .clone()
        .unwrap_or_else(|| if turn.tool_calls.is_empty() { "stop" } else { "tool_calls" }.to_string());
    let mut body = json!({
        "id": "chatcmpl-local",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": Value::Object(message), "finish_reason": finish}],
    });
    if let Some(u) = turn.usage {
        body["usage"] = json!({
            "prompt_tokens": u.prompt_tokens,
            "completion_tokens": u.completion_tokens,
            "total_tokens": u.prompt_tokens + u.completion_tokens,
        });
    }
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unset_sampling_fields_are_omitted() {
        let profile = load_profile("deepseek-v3.2-thinking").unwrap();
        let body = request_body(&profile, &ModelRequest { messages: vec![Message::user("hi")], ..Default::default() });
        let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["model", "messages", "temperature", "top_p", "max_tokens"]);
        let qwen = load_profile("qwen3-4b-instruct-2507").unwrap();
        let body = request_body(&qwen, &ModelRequest { tools: Some(json!([])), max_tokens: Some(100), ..Default::default() });
        assert_eq!(body["top_k"], 20);
        assert_eq!(body["min_p"], 0.0);
        assert_eq!(body["tool_choice"], "auto");
        assert_eq!(body["max_tokens"], 100);
        assert!(body.get("repetition_penalty").is_none());
        let claude = load_profile("claude-sonnet-4.5-think").unwrap();
        let body = request_body(&claude, &ModelRequest::default());
        assert_eq!(body["thinking"]["budget_tokens"], 60_000);
        assert_eq!(body["max_tokens"], 64_000);
    }

    #[test]
    fn parses_tool_calls_and_usage() {
        let body = json!({
            "choices": [{
                "message": {
                    "role": "assistant",
                    "content": null,
                    "tool_calls": [
                        {"id": "a", "type": "function", "function": {"name": "execute_bash", "arguments": "{\"command\": \"ls\"}"}},
                        {"id": "b", "type": "function", "function": {"name": "execute_bash", "arguments": "{oops"}}
                    ]
                },
                "finish_reason": "tool_calls"
            }],
            "usage": {"prompt_tokens": 100, "completion_tokens": 50}
        });
        let turn = parse_response(&body, Duration::from_millis(7)).unwrap();
        assert_eq!(turn.text, None);
        assert_eq!(turn.usage, Some(Usage { prompt_tokens: 100, completion_tokens: 50 }));
        assert_eq!(turn.tool_calls[0].arguments_json(), json!({"command": "ls"}));
        assert!(matches!(turn.tool_calls[1].arguments, ToolArguments::Malformed { .. }));
        assert_eq!(turn.latency_ms, 7);
        assert!(parse_response(&json!({"choices": []}), Duration::ZERO).is_err());
    }

    fn argument_map() -> impl Strategy<Value = Map<String, Value>> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Value::from),
            "\\PC{0,20}".prop_map(Value::from),
            any::<bool>().prop_map(Value::from),
            Just(Value::Null),
        ];
        let value = leaf.prop_recursive(2, 8, 3, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..3).prop_map(Value::from),
                proptest::collection::btree_map("[a-z_]{1,6}", inner, 0..3)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        });
        proptest::collection::btree_map("[a-z_]{1,10}", value, 0..5).prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn tool_call_arguments_survive_the_wire(args in argument_map(), text in proptest::option::of("\\PC{1,30}")) {
            let turn = ModelTurn {
                text,
                tool_calls: vec![ToolCall::new("id-1", "str_replace_editor", Value::Object(args.clone()))],
                usage: Some(Usage { prompt_tokens: 3, completion_tokens: 4 }),
                ..Default::default()
            };
            let parsed = parse_response(&response_body(&turn), Duration::ZERO).unwrap();
            prop_assert_eq!(&parsed.tool_calls[0].arguments, &ToolArguments::Parsed(args));
            prop_assert_eq!(parsed.text, turn.text);
            prop_assert_eq!(parsed.usage, turn.usage);
        }
    }
}
