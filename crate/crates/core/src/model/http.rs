use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::Value;

use super::{parse_response, request_body, ModelClient, ModelError, ModelProfile, ModelRequest, ModelTurn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial_backoff: Duration::from_millis(500) }
    }
}

/// Client for any endpoint speaking the chat-completions protocol.
#[derive(Debug, Clone)]
pub struct HttpModelClient {
    client: reqwest::Client,
    retry: RetryPolicy,
    log_traffic: bool,
}

impl HttpModelClient {
    /// `max_connections` bounds idle connections kept per host.
    pub fn new(timeout: Duration, max_connections: usize) -> Result<Self, ModelError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .pool_max_idle_per_host(max_connections)
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(Self { client, retry: RetryPolicy::default(), log_traffic: false })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Logs request and response bodies at debug level, with the bearer token masked.
    pub fn with_traffic_log(mut self, enabled: bool) -> Self {
        self.log_traffic = enabled;
        self
    }

    fn url(endpoint: &str) -> String {
        let base = endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    async fn attempt(&self, url: &str, token: Option<&str>, body: &Value) -> Result<Value, ModelError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ModelError::Transport(e.to_string()))?;
        if self.log_traffic {
            tracing::debug!(status = status.as_u16(), "model response: {}", redact(&text, token));
        }
        if !status.is_success() {
            return Err(ModelError::Status { status: status.as_u16(), body: redact(&text, token) });
        }
        serde_json::from_str(&text).map_err(|e| ModelError::Decode(e.to_string()))
    }
}

fn redact(text: &str, token: Option<&str>) -> String {
    match token {
        Some(t) if !t.is_empty() => text.replace(t, "[REDACTED]"),
        _ => text.to_string(),
    }
}

#[async_trait]
impl ModelClient for HttpModelClient {
    async fn complete(&self, profile: &ModelProfile, request: &ModelRequest) -> Result<ModelTurn, ModelError> {
        let url = Self::url(&profile.endpoint_url);
        let token = profile
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        let body = request_body(profile, request);
        if self.log_traffic {
            tracing::debug!(%url, "model request: {}", redact(&body.to_string(), token.as_deref()));
        }
        let started = Instant::now();
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, token.as_deref(), &body).await {
                Ok(value) => return parse_response(&value, started.elapsed()),
                Err(err) if err.is_transient() && attempt < self.retry.retries => {
                    attempt += 1;
                    tracing::warn!(attempt, "model request failed, retrying in {backoff:?}: {err}");
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
                Err(err) => return Err(err),
            }
        }
    }
}
