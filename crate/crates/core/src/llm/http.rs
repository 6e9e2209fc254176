//! Blocking clients for chat-completions and embeddings endpoints.

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ClientError, ModelConfig};
use crate::select::{Embedder, EmbeddingVector};

fn api_key(config: &ModelConfig) -> Result<String, ClientError> {
    match std::env::var(&config.api_key_env) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(ClientError::Auth {
            attempts: 0,
            message: format!("environment variable {} is not set", config.api_key_env),
        }),
    }
}

fn agent(config: &ModelConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(config.request_timeout()))
        .http_status_as_error(false)
        .build()
        .into()
}

fn endpoint(config: &ModelConfig, path: &str) -> String {
    format!("{}/{path}", config.endpoint_base.trim_end_matches('/'))
}

/// POSTs `body` and returns the decoded JSON reply, mapping HTTP statuses
/// onto retryable and terminal errors.
fn post_json(agent: &ureq::Agent, url: &str, key: &str, body: &Value) -> Result<Value, ClientError> {
    let response = agent.post(url).header("Authorization", &format!("Bearer {key}")).send_json(body);
    let mut response = match response {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(ClientError::Timeout { attempts: 0 }),
        Err(e) => return Err(ClientError::Transport { attempts: 0, message: e.to_string() }),
    };
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| ClientError::Transport { attempts: 0, message: e.to_string() })?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("invalid JSON: {e}"))),
        401 | 403 => Err(ClientError::Auth { attempts: 0, message: format!("HTTP {status}: {text}") }),
        408 | 429 | 500..=599 => Err(ClientError::Transport { attempts: 0, message: format!("HTTP {status}: {text}") }),
        _ => Err(ClientError::Protocol(format!("HTTP {status}: {text}"))),
    }
}

/// Chat-completions client. The prompt goes out as a single user message.
pub struct HttpChatBackend {
    key: String,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    /// Reads the bearer token from the environment variable named in `config`.
    pub fn from_env(config: &ModelConfig) -> Result<Self, ClientError> {
        Ok(Self { key: api_key(config)?, agent: agent(config) })
    }

    pub fn with_key(config: &ModelConfig, key: impl Into<String>) -> Self {
        Self { key: key.into(), agent: agent(config) }
    }

    pub fn request_body(request: &ChatRequest<'_>) -> Value {
        json!({
            "model": request.model.model_name,
            "messages": [{ "role": "user", "content": request.document.text }],
            "temperature": request.model.temperature,
            "max_tokens": request.model.max_output_tokens,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let url = endpoint(request.model, "chat/completions");
        let reply = post_json(&self.agent, &url, &self.key, &Self::request_body(request))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Protocol("response has no choices[0].message.content".into()))
    }
}

/// Embeddings client.
pub struct HttpEmbedder {
    key: String,
    agent: ureq::Agent,
    config: ModelConfig,
}

impl HttpEmbedder {
    pub fn from_env(config: &ModelConfig) -> Result<Self, ClientError> {
        Ok(Self { key: api_key(config)?, agent: agent(config), config: config.clone() })
    }

    pub fn with_key(config: &ModelConfig, key: impl Into<String>) -> Self {
        Self { key: key.into(), agent: agent(config), config: config.clone() }
    }

    fn embed_once(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        let url = endpoint(&self.config, "embeddings");
        let body = json!({ "model": self.config.model_name, "input": text });
        let reply = post_json(&self.agent, &url, &self.key, &body)?;
        let values = reply["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ClientError::Protocol("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ClientError::Protocol("non-numeric embedding value".into())))
            .collect::<Result<Vec<_>, _>>()?;
        EmbeddingVector::new(values).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.embed_once(text) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < policy.max_attempts => {
                    std::thread::sleep(policy.backoff(attempt));
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}
