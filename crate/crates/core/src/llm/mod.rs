//! Model access: chat and embedding backends behind object-safe traits, the
//! retry loop, response parsing and fine-tuning data export.

mod finetune;
mod http;
mod mock;
mod parse;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use finetune::{export_finetune_dataset, finetune_record, FineTuneError, FineTuneRecord};
pub use http::{HttpChatBackend, HttpEmbedder};
pub use mock::{FlakyBackend, HashEmbedder, MockBehavior, MockChatBackend, MOCK_EMBEDDING_DIM};
pub use parse::{
    parse_detection_response, parse_detection_response_with, DetectionOutcome, FailureClass, RefusalPatterns,
};

use crate::prompt::PromptDocument;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed after {attempts} attempt(s): {message}")]
    Auth { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid model config: {0}")]
    Config(String),
}

impl ClientError {
    fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transport { .. } | ClientError::Timeout { .. })
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            ClientError::Transport { message, .. } => ClientError::Transport { attempts: n, message },
            ClientError::Auth { message, .. } => ClientError::Auth { attempts: n, message },
            ClientError::Timeout { .. } => ClientError::Timeout { attempts: n },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff_ms: 500 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from the base.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint_base: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_ms: u64,
    pub retry: RetryPolicy,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint_base: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 256,
            request_timeout_ms: 60_000,
            retry: RetryPolicy::default(),
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl ModelConfig {
    pub fn named(model_name: impl Into<String>) -> Self {
        Self { model_name: model_name.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.retry.max_attempts < 1 {
            return Err(ClientError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ClientError::Config("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

/// One chat request. `case_id` identifies the evaluated flow; remote
/// backends ignore it, offline mocks use it to look up the gold label.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub document: &'a PromptDocument,
    pub model: &'a ModelConfig,
    pub case_id: Option<usize>,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// A single attempt; retries live in [`chat_complete`].
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

/// Sends a prompt, retrying transient failures with exponential backoff.
pub fn chat_complete(backend: &dyn ChatBackend, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
    request.model.validate()?;
    if request.document.text.is_empty() {
        return Err(ClientError::EmptyInput);
    }
    let policy = request.model.retry;
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.send(request) {
            Ok(text) => return Ok(Completion { text, attempts: attempt }),
            Err(e) if e.is_transient() && attempt < policy.max_attempts => {
                log::warn!("{}: attempt {attempt} failed: {e}", backend.name());
                std::thread::sleep(policy.backoff(attempt));
            }
            Err(e) => return Err(e.with_attempts(attempt)),
        }
    }
}
