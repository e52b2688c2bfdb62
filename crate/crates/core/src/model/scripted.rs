use std::collections::VecDeque;
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;

use super::{ModelClient, ModelError, ModelProfile, ModelRequest, ModelTurn};

/// Replays a fixed list of turns, then repeats the last one if asked to.
#[derive(Debug)]
pub struct ScriptedModel {
    turns: Mutex<VecDeque<ModelTurn>>,
    repeat_last: bool,
    last: Mutex<Option<ModelTurn>>,
    requests: Mutex<Vec<ModelRequest>>,
}

impl ScriptedModel {
    pub fn new(turns: impl IntoIterator<Item = ModelTurn>) -> Self {
        Self {
            turns: Mutex::new(turns.into_iter().collect()),
            repeat_last: false,
            last: Mutex::new(None),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Keeps answering with the final turn once the script runs out.
    pub fn repeating(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.requests.lock().clone()
    }
}

#[async_trait]
impl ModelClient for ScriptedModel {
    async fn complete(&self, _profile: &ModelProfile, request: &ModelRequest) -> Result<ModelTurn, ModelError> {
        self.requests.lock().push(request.clone());
        let next = self.turns.lock().pop_front();
        match next {
            Some(turn) => {
                *self.last.lock() = Some(turn.clone());
                Ok(turn)
            }
            None if self.repeat_last => self
                .last
                .lock()
                .clone()
                .ok_or_else(|| ModelError::Script("empty script".into())),
            None => Err(ModelError::Script("script exhausted".into())),
        }
    }
}

type Policy = dyn Fn(&ModelProfile, &ModelRequest) -> Result<ModelTurn, ModelError> + Send + Sync;

/// A model backed by a function of the request; handy for deterministic solvers.
#[derive(Clone)]
pub struct FnModel {
    policy: Arc<Policy>,
}

impl FnModel {
    pub fn new<F>(policy: F) -> Self
    where
        F: Fn(&ModelProfile, &ModelRequest) -> Result<ModelTurn, ModelError> + Send + Sync + 'static,
    {
        Self { policy: Arc::new(policy) }
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnModel")
    }
}

#[async_trait]
impl ModelClient for FnModel {
    async fn complete(&self, profile: &ModelProfile, request: &ModelRequest) -> Result<ModelTurn, ModelError> {
        (self.policy)(profile, request)
    }
}
