//! Chat backends: the trait every agent call goes through, a scripted
//! replay backend for hermetic runs, and a limiter bounding in-flight calls.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::{Condvar, Mutex};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentRole {
    Keywords,
    Gag,
    Feedback,
    Regeneration,
    Arbitrator,
    Judge,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Keywords => "keywords",
            AgentRole::Gag => "gag",
            AgentRole::Feedback => "feedback",
            AgentRole::Regeneration => "regeneration",
            AgentRole::Arbitrator => "arbitrator",
            AgentRole::Judge => "judge",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent call. `scope` names the independent actor issuing it (an item
/// id, a chain id, ...); the scripted backend routes on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub scope: String,
    pub prompt: String,
    pub seed: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted for `{0}`")]
    ScriptExhausted(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(&'static str),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Replays canned responses from per-key queues.
///
/// A request is served from the queue `"<role>/<scope>"` when it exists,
/// otherwise from `"<role>"`. Each queue is consumed in order; an empty or
/// missing queue is an error. Keying queues per scope keeps replay
/// deterministic when chains run concurrently.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    calls: Mutex<Vec<(String, AgentRequest)>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<I, S>(self, key: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.push(key, responses);
        self
    }

    pub fn push<I, S>(&self, key: &str, responses: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut queues = self.queues.lock().unwrap();
        queues
            .entry(key.to_string())
            .or_default()
            .extend(responses.into_iter().map(Into::into));
    }

    /// Parses a script of the form `{"<key>": ["response", ...], ...}`.
    pub fn from_json_str(script: &str) -> Result<Self, BackendError> {
        let map: HashMap<String, Vec<String>> =
            serde_json::from_str(script).map_err(|e| BackendError::InvalidScript(e.to_string()))?;
        let backend = ScriptedBackend::new();
        for (key, responses) in map {
            backend.push(&key, responses);
        }
        Ok(backend)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Every request served so far, with the queue key that answered it.
    pub fn calls(&self) -> Vec<(String, AgentRequest)> {
        self.calls.lock().unwrap().clone()
    }

    pub fn remaining(&self, key: &str) -> usize {
        self.queues.lock().unwrap().get(key).map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError> {
        let scoped = format!("{}/{}", request.role, request.scope);
        let mut queues = self.queues.lock().unwrap();
        let key = if queues.contains_key(&scoped) {
            scoped
        } else {
            request.role.as_str().to_string()
        };
        let response = queues
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| BackendError::ScriptExhausted(key.clone()))?;
        drop(queues);
        self.calls.lock().unwrap().push((key, request.clone()));
        Ok(response)
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Bounds the number of requests in flight across every caller sharing it.
pub struct Limited<B> {
    inner: B,
    gate: Semaphore,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Limited {
            inner,
            gate: Semaphore {
                permits: Mutex::new(max_in_flight.max(1)),
                freed: Condvar::new(),
            },
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Limited<B> {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError> {
        let _permit = self.gate.acquire();
        self.inner.complete(request)
    }
}
