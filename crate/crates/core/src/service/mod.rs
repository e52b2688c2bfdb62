//! HTTP rollout service: submit an episode, poll it, check health.
//!
//! Episodes wait in a bounded FIFO queue served by a fixed pool of workers.
//! Bookkeeping lives on disk, so a restarted service picks up queued and
//! interrupted episodes where it left off.

mod store;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Notify;
use tokio::task::JoinHandle;

use crate::agent::{turn_log_lines, TurnLogLine};
use crate::model::{ModelClient, ProfileRegistry};
use crate::rewards::{EvaluatorRegistry, ScoringMode};
use crate::rollout::{run_task, Mode, ResultRow, RunContext, RunOptions};
use crate::sandbox::SandboxFleet;
use crate::task::TaskSpec;

pub use store::{EpisodeRecord, EpisodeStatus, EpisodeStore};

pub const DEFAULT_WORKERS: usize = 64;
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Shared bearer token; `None` disables auth.
    pub auth_token: Option<String>,
    pub workers: usize,
    /// Episodes allowed to wait; submissions beyond it get 429.
    pub queue_capacity: usize,
    pub store_dir: PathBuf,
    pub default_profile: String,
    pub default_scoring: ScoringMode,
    pub run: RunOptions,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>, default_profile: impl Into<String>) -> Self {
        Self {
            auth_token: None,
            workers: DEFAULT_WORKERS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            store_dir: store_dir.into(),
            default_profile: default_profile.into(),
            default_scoring: ScoringMode::Rl,
            run: RunOptions::default(),
        }
    }
}

/// Backends the workers use.
#[derive(Clone)]
pub struct ServiceBackends {
    pub fleet: Option<SandboxFleet>,
    pub model: Arc<dyn ModelClient>,
    pub profiles: ProfileRegistry,
    pub evaluators: EvaluatorRegistry,
}

struct Inner {
    config: ServiceConfig,
    backends: ServiceBackends,
    store: EpisodeStore,
    queue: Mutex<VecDeque<String>>,
    wake: Notify,
    running: AtomicUsize,
    seq: AtomicU64,
}

pub struct Service {
    inner: Arc<Inner>,
    workers: Vec<JoinHandle<()>>,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Service {
    /// Opens the store, re-queues unfinished episodes, and starts the workers.
    pub fn start(config: ServiceConfig, backends: ServiceBackends) -> std::io::Result<Self> {
        let store = EpisodeStore::open(&config.store_dir)?;
        std::fs::create_dir_all(config.store_dir.join("trajectories"))?;
        let mut queue = VecDeque::new();
        let mut seq = 0;
        for mut record in store.all()? {
            seq = seq.max(record.seq + 1);
            if matches!(record.status, EpisodeStatus::Queued | EpisodeStatus::Running) {
                record.status = EpisodeStatus::Queued;
                store.put(&record)?;
                queue.push_back(record.episode_id);
            }
        }
        if !queue.is_empty() {
            tracing::info!(resumed = queue.len(), "re-queued unfinished episodes");
        }
        let workers = config.workers.max(1);
        let inner = Arc::new(Inner {
            config,
            backends,
            store,
            queue: Mutex::new(queue),
            wake: Notify::new(),
            running: AtomicUsize::new(0),
            seq: AtomicU64::new(seq),
        });
        let workers = (0..workers).map(|_| tokio::spawn(worker(inner.clone()))).collect();
        Ok(Self { inner, workers })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/v1/episodes", post(submit))
            .route("/v1/episodes/:id", get(poll))
            .route("/v1/episodes/:id/trajectory", get(trajectory))
            .with_state(self.inner.clone())
    }

    /// Serves until the listener fails.
    pub async fn serve(&self, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }

    /// Stops the workers. Episodes they were running stay marked running and resume on restart.
    pub fn shutdown(&mut self) {
        for w in self.workers.drain(..) {
            w.abort();
        }
    }

    pub fn queued(&self) -> usize {
        self.inner.queue.lock().len()
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

async fn worker(inner: Arc<Inner>) {
    loop {
        let next = inner.queue.lock().pop_front();
        let Some(id) = next else {
            inner.wake.notified().await;
            continue;
        };
        inner.running.fetch_add(1, Ordering::SeqCst);
        if let Err(e) = run_one(&inner, &id).await {
            tracing::error!(episode = %id, error = %e, "episode bookkeeping failed");
        }
        inner.running.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn run_one(inner: &Inner, id: &str) -> std::io::Result<()> {
    let Some(mut record) = inner.store.get(id)? else { return Ok(()) };
    record.status = EpisodeStatus::Running;
    inner.store.put(&record)?;
    let profile = match inner.backends.profiles.get(&record.profile) {
        Ok(p) => p,
        Err(e) => {
            record.status = EpisodeStatus::Failed;
            record.error = Some(e.to_string());
            record.finished_unix_ms = Some(unix_ms());
            return inner.store.put(&record);
        }
    };
    let ctx = RunContext {
        fleet: inner.backends.fleet.clone(),
        model: inner.backends.model.clone(),
        profile,
        evaluators: inner.backends.evaluators.clone(),
    };
    let options = RunOptions { mode: record.mode, scoring: record.scoring, ..inner.config.run.clone() };
    let outcome = run_task(&record.task, &ctx, &options).await;
    let lines = turn_log_lines(&outcome.result.trajectory);
    let path = inner.store.dir().join("trajectories").join(format!("{id}.json"));
    std::fs::write(path, serde_json::to_vec(&lines).expect("log lines serialize"))?;
    record.status = EpisodeStatus::Completed;
    record.error = outcome.row.error.clone();
    record.result = Some(outcome.row);
    record.finished_unix_ms = Some(unix_ms());
    inner.store.put(&record)
}

/// Body of `POST /v1/episodes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringMode>,
}

/// Body of `GET /v1/episodes/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeView {
    pub episode_id: String,
    pub status: EpisodeStatus,
    pub task_id: String,
    pub profile: String,
    pub mode: Mode,
    pub scoring: ScoringMode,
    pub submitted_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub result: Option<ResultRow>,
    pub error: Option<String>,
}

impl From<EpisodeRecord> for EpisodeView {
    fn from(r: EpisodeRecord) -> Self {
        Self {
            episode_id: r.episode_id,
            status: r.status,
            task_id: r.task.id,
            profile: r.profile,
            mode: r.mode,
            scoring: r.scoring,
            submitted_unix_ms: r.submitted_unix_ms,
            finished_unix_ms: r.finished_unix_ms,
            result: r.result,
            error: r.error,
        }
    }
}

fn error(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Response {
    let mut body = json!({ "error": code, "message": message.into() });
    if let Some(field) = field {
        body["field"] = json!(field);
    }
    (status, Json(body)).into_response()
}

fn authorized(inner: &Inner, headers: &HeaderMap) -> Result<(), Response> {
    let Some(token) = &inner.config.auth_token else { return Ok(()) };
    let given = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token", None))
    }
}

async fn health(State(inner): State<Arc<Inner>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "queued": inner.queue.lock().len(),
        "running": inner.running.load(Ordering::SeqCst),
        "workers": inner.config.workers.max(1),
        "queue_capacity": inner.config.queue_capacity,
    }))
}

async fn submit(State(inner): State<Arc<Inner>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Err(r) = authorized(&inner, &headers) {
        return r;
    }
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_json", e.to_string(), None),
    };
    let request: SubmitRequest = match serde_path_to_error::deserialize(value) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            let field = (path != ".").then_some(path);
            return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.into_inner().to_string(), field);
        }
    };
    if let Err(e) = request.task.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_task", e.to_string(), Some("task".into()));
    }
    let profile = request.profile.unwrap_or_else(|| inner.config.default_profile.clone());
    if let Err(e) = inner.backends.profiles.get(&profile) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "unknown_profile", e.to_string(), Some("profile".into()));
    }
    let mode = request.mode.unwrap_or(inner.config.run.mode);
    if mode == Mode::Sandbox && inner.backends.fleet.is_none() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "mode_unavailable", "this service has no sandbox fleet", Some("mode".into()));
    }
    let mut queue = inner.queue.lock();
    if queue.len() >= inner.config.queue_capacity {
        return error(StatusCode::TOO_MANY_REQUESTS, "queue_full", format!("{} episodes already queued", queue.len()), None);
    }
    let record = EpisodeRecord {
        episode_id: uuid::Uuid::new_v4().to_string(),
        seq: inner.seq.fetch_add(1, Ordering::SeqCst),
        status: EpisodeStatus::Queued,
        task: request.task,
        profile,
        mode,
        scoring: request.scoring.unwrap_or(inner.config.default_scoring),
        submitted_unix_ms: unix_ms(),
        finished_unix_ms: None,
        result: None,
        error: None,
    };
    if let Err(e) = inner.store.put(&record) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string(), None);
    }
    queue.push_back(record.episode_id.clone());
    drop(queue);
    inner.wake.notify_one();
    (StatusCode::ACCEPTED, Json(json!({ "episode_id": record.episode_id, "status": "queued" }))).into_response()
}

async fn poll(State(inner): State<Arc<Inner>>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    if let Err(r) = authorized(&inner, &headers) {
        return r;
    }
    match inner.store.get(&id) {
        Ok(Some(record)) => Json(EpisodeView::from(record)).into_response(),
        Ok(None) => error(StatusCode::NOT_FOUND, "not_found", format!("no episode {id}"), None),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string(), None),
    }
}

async fn trajectory(State(inner): State<Arc<Inner>>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    if let Err(r) = authorized(&inner, &headers) {
        return r;
    }
    let ok = id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
    let path = inner.store.dir().join("trajectories").join(format!("{id}.json"));
    match std::fs::read(&path) {
        Ok(bytes) if ok => match serde_json::from_slice::<Vec<TurnLogLine>>(&bytes) {
            Ok(lines) => Json(json!({ "episode_id": id, "turns": lines })).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string(), None),
        },
        _ => error(StatusCode::NOT_FOUND, "not_found", format!("no finished trajectory for {id}"), None),
    }
}
