use std::collections::HashMap;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use tokio::task::JoinHandle;

use super::{ContainerRuntime, Sandbox, SandboxConfig, SandboxError, SandboxId, SandboxShared, SandboxState};

/// Provisions sandboxes from one shared image and keeps track of the live ones.
///
/// Safe to share across tasks. Every sandbox from a fleet uses the fleet's
/// config, so a run never mixes images.
#[derive(Debug, Clone)]
pub struct SandboxFleet {
    inner: Arc<FleetInner>,
}

#[derive(Debug)]
struct FleetInner {
    runtime: Arc<dyn ContainerRuntime>,
    config: SandboxConfig,
    live: Mutex<HashMap<SandboxId, Weak<SandboxShared>>>,
    slots: Option<Arc<Semaphore>>,
}

impl SandboxFleet {
    pub fn new(runtime: Arc<dyn ContainerRuntime>, config: SandboxConfig) -> Result<Self, SandboxError> {
        config.validate()?;
        Ok(Self {
            inner: Arc::new(FleetInner {
                runtime,
                config,
                live: Mutex::new(HashMap::new()),
                slots: None,
            }),
        })
    }

    /// Caps the number of simultaneously live sandboxes; `create` waits for a free slot.
    pub fn with_capacity(mut self, max_live: usize) -> Self {
        Arc::get_mut(&mut self.inner)
            .expect("set capacity before sharing the fleet")
            .slots = Some(Arc::new(Semaphore::new(max_live.max(1))));
        self
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.inner.config
    }

    pub fn runtime(&self) -> &Arc<dyn ContainerRuntime> {
        &self.inner.runtime
    }

    pub async fn create(&self) -> Result<FleetSandbox, SandboxError> {
        let permit = match &self.inner.slots {
            Some(slots) => Some(
                slots
                    .clone()
                    .acquire_owned()
                    .await
                    .map_err(|_| SandboxError::RuntimeUnreachable("fleet closed".into()))?,
            ),
            None => None,
        };
        let sandbox = Sandbox::start(self.inner.runtime.clone(), self.inner.config.clone()).await?;
        self.inner
            .live
            .lock()
            .insert(sandbox.id().clone(), Arc::downgrade(sandbox.shared()));
        Ok(FleetSandbox { sandbox, _permit: permit })
    }

    /// Ids of sandboxes created by this fleet that are not yet destroyed.
    pub fn live_ids(&self) -> Vec<SandboxId> {
        let mut live = self.inner.live.lock();
        live.retain(|_, weak| {
            weak.upgrade()
                .is_some_and(|s| *s.state.lock() != SandboxState::Destroyed)
        });
        let mut ids: Vec<_> = live.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Containers the runtime reports, including any this fleet did not create.
    pub async fn runtime_containers(&self) -> Result<Vec<SandboxId>, SandboxError> {
        self.inner.runtime.list().await
    }

    /// Destroys sandboxes idle for longer than their TTL. Returns the reaped ids.
    pub async fn reap_idle(&self) -> Vec<SandboxId> {
        let now = Instant::now();
        let candidates: Vec<Arc<SandboxShared>> = self
            .inner
            .live
            .lock()
            .values()
            .filter_map(Weak::upgrade)
            .filter(|s| {
                *s.state.lock() == SandboxState::Running
                    && now.duration_since(*s.last_active.lock()) >= s.idle_ttl
            })
            .collect();
        let mut reaped = Vec::new();
        for shared in candidates {
            {
                let mut state = shared.state.lock();
                if *state != SandboxState::Running {
                    continue;
                }
                *state = SandboxState::Stopped;
            }
            if let Err(err) = self.inner.runtime.remove(&shared.id).await {
                tracing::warn!(sandbox = %shared.id, "reaping idle sandbox failed: {err}");
            }
            *shared.state.lock() = SandboxState::Destroyed;
            tracing::info!(sandbox = %shared.id, "reaped idle sandbox");
            reaped.push(shared.id.clone());
        }
        self.inner.live.lock().retain(|id, _| !reaped.contains(id));
        reaped
    }

    /// Periodically reaps idle sandboxes until the returned task is aborted.
    pub fn spawn_reaper(&self, every: Duration) -> JoinHandle<()> {
        let fleet = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                fleet.reap_idle().await;
            }
        })
    }
}

/// A sandbox holding a fleet slot; derefs to [`Sandbox`].
#[derive(Debug)]
pub struct FleetSandbox {
    sandbox: Sandbox,
    _permit: Option<OwnedSemaphorePermit>,
}

impl FleetSandbox {
    pub fn into_inner(self) -> Sandbox {
        self.sandbox
    }
}

impl std::ops::Deref for FleetSandbox {
    type Target = Sandbox;
    fn deref(&self) -> &Sandbox {
        &self.sandbox
    }
}

impl std::ops::DerefMut for FleetSandbox {
    fn deref_mut(&mut self) -> &mut Sandbox {
        &mut self.sandbox
    }
}
