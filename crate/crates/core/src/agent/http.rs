//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{AgentRequest, BackendError, ChatBackend};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const API_KEY_ENV: &str = "CARTS_API_KEY";

static REQUESTS_SENT: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests issued by this process.
pub fn requests_sent() -> u64 {
    REQUESTS_SENT.load(Ordering::SeqCst)
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Extracts `choices[0].message.content` from a response body.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let parsed: ChatCompletionResponse =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
}

#[derive(Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: String,
    max_attempts: u32,
    backoff: Duration,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        temperature: f64,
        api_key: impl Into<String>,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        HttpBackend {
            agent,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            temperature,
            api_key: api_key.into(),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads the credential from `CARTS_API_KEY`.
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        temperature: f64,
    ) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(endpoint, model, temperature, key))
    }

    /// Attempts per request for transport failures, 429 and 5xx responses.
    pub fn with_retries(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint)
    }

    fn send_once(&self, body: &ChatCompletionRequest<'_>) -> Result<String, BackendError> {
        REQUESTS_SENT.fetch_add(1, Ordering::SeqCst);
        let mut response = self
            .agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        parse_completion(&text)
    }
}

fn is_transient(err: &BackendError) -> bool {
    match err {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &AgentRequest) -> Result<String, BackendError> {
        let body = ChatCompletionRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: self.temperature,
            seed: request.seed,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(&body) {
                Err(e) if attempt < self.max_attempts && is_transient(&e) => {
                    log::warn!("{} request failed ({e}), retrying", request.role);
                    std::thread::sleep(self.backoff * attempt);
                }
                other => return other,
            }
        }
    }
}
