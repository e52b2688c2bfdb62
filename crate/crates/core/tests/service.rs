mod common;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use sandbox_rollout::model::{ModelClient, ModelError, ModelProfile, ModelRequest, ModelTurn, ProfileRegistry};
use sandbox_rollout::rewards::EvaluatorRegistry;
use sandbox_rollout::rollout::Mode;
use sandbox_rollout::sandbox::SandboxFleet;
use sandbox_rollout::service::{Service, ServiceBackends, ServiceConfig};
use sandbox_rollout::toy::{toy_suite, ToySolver};
use serde_json::{json, Value};

const SCHEMA: &str = include_str!("../resources/service.schema.json");
const TOKEN: &str = "s3cret";

/// Never answers.
struct Stalled;

#[async_trait]
impl ModelClient for Stalled {
    async fn complete(&self, _: &ModelProfile, _: &ModelRequest) -> Result<ModelTurn, ModelError> {
        std::future::pending().await
    }
}

struct Running {
    service: Service,
    server: tokio::task::JoinHandle<()>,
    base: String,
    http: reqwest::Client,
}

impl Drop for Running {
    fn drop(&mut self) {
        self.server.abort();
        self.service.shutdown();
    }
}

fn profiles() -> ProfileRegistry {
    ProfileRegistry { profiles: [("toy".to_string(), ModelProfile::new("toy"))].into_iter().collect() }
}

async fn start(
    store: &std::path::Path,
    model: Arc<dyn ModelClient>,
    fleet: Option<SandboxFleet>,
    tweak: impl FnOnce(&mut ServiceConfig),
) -> Running {
    let mut config = ServiceConfig::new(store, "toy");
    config.auth_token = Some(TOKEN.into());
    config.run.mode = if fleet.is_some() { Mode::Sandbox } else { Mode::PlainLlm };
    tweak(&mut config);
    let backends = ServiceBackends { fleet, model, profiles: profiles(), evaluators: EvaluatorRegistry::new() };
    let service = Service::start(config, backends).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let router = service.router();
    let server = tokio::spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    Running { service, server, base, http: reqwest::Client::new() }
}

impl Running {
    async fn post(&self, body: &str, token: Option<&str>) -> (u16, Value) {
        let mut req = self.http.post(format!("{}/v1/episodes", self.base)).body(body.to_string());
        req = req.header("content-type", "application/json");
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(format!("{}{path}", self.base)).bearer_auth(TOKEN).send().await.unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap())
    }

    async fn submit(&self, task: &sandbox_rollout::task::TaskSpec) -> String {
        let (status, body) = self.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
        assert_eq!(status, 202, "{body}");
        body["episode_id"].as_str().unwrap().to_string()
    }

    async fn wait(&self, id: &str) -> Value {
        for _ in 0..600 {
            let (status, view) = self.get(&format!("/v1/episodes/{id}")).await;
            assert_eq!(status, 200);
            if view["status"] == "completed" || view["status"] == "failed" {
                return view;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("episode {id} never finished");
    }
}

fn conforms(def: &str, value: &Value) {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let errors = common::schema::violations(&schema, def, value);
    assert!(errors.is_empty(), "{def}: {errors:?}\n{value}");
}

#[tokio::test]
async fn trivial_task_is_scored_through_the_api() {
    let store = tempfile::tempdir().unwrap();
    let svc = start(store.path(), Arc::new(ToySolver), None, |_| {}).await;
    let task = &toy_suite()[0];
    conforms("SubmitRequest", &json!({ "task": task }));
    let (status, body) = svc.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
    assert_eq!(status, 202);
    conforms("SubmitResponse", &body);
    let id = body["episode_id"].as_str().unwrap();
    let view = svc.wait(id).await;
    conforms("EpisodeView", &view);
    assert_eq!(view["status"], "completed");
    assert_eq!(view["result"]["reward"], 1.0);
    assert_eq!(view["result"]["turns"], 1);

    let (status, traj) = svc.get(&format!("/v1/episodes/{id}/trajectory")).await;
    assert_eq!(status, 200);
    conforms("TrajectoryResponse", &traj);
    assert_eq!(traj["turns"].as_array().unwrap().len(), 1);

    let (status, err) = svc.get("/v1/episodes/does-not-exist").await;
    assert_eq!(status, 404);
    conforms("Error", &err);
    let (_, health) = svc.get("/health").await;
    conforms("Health", &health);
}

#[tokio::test]
async fn sandbox_episode_through_the_api() {
    let Some((fleet, _rt, _state)) = common::fleet() else { return };
    let store = tempfile::tempdir().unwrap();
    let svc = start(store.path(), Arc::new(ToySolver), Some(fleet), |_| {}).await;
    let id = svc.submit(&toy_suite()[3]).await;
    let view = svc.wait(&id).await;
    conforms("EpisodeView", &view);
    assert_eq!(view["result"]["reward"], 1.0);
    assert_eq!(view["result"]["termination"], "submitted");
    assert!(view["result"]["sandbox_id"].is_string());
}

#[tokio::test]
async fn bad_tokens_are_rejected_but_health_is_open() {
    let store = tempfile::tempdir().unwrap();
    let svc = start(store.path(), Arc::new(ToySolver), None, |_| {}).await;
    let body = json!({ "task": toy_suite()[0] }).to_string();
    for token in [None, Some("wrong")] {
        let (status, err) = svc.post(&body, token).await;
        assert_eq!(status, 401);
        conforms("Error", &err);
    }
    let resp = svc.http.get(format!("{}/health", svc.base)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
}

#[tokio::test]
async fn invalid_requests_name_the_field() {
    let store = tempfile::tempdir().unwrap();
    let svc = start(store.path(), Arc::new(ToySolver), None, |_| {}).await;
    let mut task = serde_json::to_value(&toy_suite()[0]).unwrap();

    task["answer_key"]["kind"] = json!("fuzzy");
    let (status, err) = svc.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
    assert_eq!(status, 422);
    conforms("Error", &err);
    assert_eq!(err["field"], "task.answer_key.kind");

    task["answer_key"]["kind"] = json!("exact");
    task["colour"] = json!("red");
    let (status, err) = svc.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
    assert_eq!(status, 422);
    assert!(err["message"].as_str().unwrap().contains("colour"), "{err}");

    task.as_object_mut().unwrap().remove("colour");
    task["id"] = json!(" ");
    let (status, err) = svc.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
    assert_eq!((status, err["error"].as_str()), (422, Some("invalid_task")));

    task["id"] = json!("ok");
    let (status, err) = svc.post(&json!({ "task": task, "profile": "nope" }).to_string(), Some(TOKEN)).await;
    assert_eq!((status, err["field"].as_str()), (422, Some("profile")));

    let (status, err) = svc.post(&json!({ "task": task, "mode": "sandbox" }).to_string(), Some(TOKEN)).await;
    assert_eq!((status, err["error"].as_str()), (422, Some("mode_unavailable")));

    let (status, err) = svc.post("{\"task\": ", Some(TOKEN)).await;
    assert_eq!(status, 400);
    conforms("Error", &err);
}

#[tokio::test]
async fn full_queue_gives_429_and_health_stays_up() {
    let store = tempfile::tempdir().unwrap();
    let svc = start(store.path(), Arc::new(Stalled), None, |c| {
        c.workers = 1;
        c.queue_capacity = 2;
    })
    .await;
    let task = &toy_suite()[0];
    svc.submit(task).await;
    for _ in 0..100 {
        if svc.get("/health").await.1["running"] == 1 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    svc.submit(task).await;
    svc.submit(task).await;
    let (status, err) = svc.post(&json!({ "task": task }).to_string(), Some(TOKEN)).await;
    assert_eq!(status, 429);
    conforms("Error", &err);
    let (status, health) = svc.get("/health").await;
    assert_eq!(status, 200);
    assert_eq!((health["queued"].as_u64(), health["running"].as_u64()), (Some(2), Some(1)));
}

#[tokio::test]
async fn unfinished_episodes_resume_after_a_restart() {
    let store = tempfile::tempdir().unwrap();
    let suite = toy_suite();
    let ids = {
        let svc = start(store.path(), Arc::new(Stalled), None, |c| c.workers = 1).await;
        let mut ids = Vec::new();
        for task in &suite[..3] {
            ids.push(svc.submit(task).await);
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
        ids
    };
    let svc = start(store.path(), Arc::new(ToySolver), None, |_| {}).await;
    for (id, task) in ids.iter().zip(&suite) {
        let view = svc.wait(id).await;
        assert_eq!(view["task_id"], task.id.as_str());
        assert_eq!(view["result"]["reward"], 1.0);
    }
}
