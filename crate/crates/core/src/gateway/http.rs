//! Remote backends speaking the common chat-completions and embeddings
//! JSON shapes.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::{
    BackendFailure, BackendReply, CompletionBackend, CompletionRequest, EmbeddingBackend, ErrorKind,
    Usage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl RemoteConfig {
    fn agent(&self) -> Agent {
        Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn post(&self, agent: &Agent, body: serde_json::Value) -> Result<serde_json::Value, BackendFailure> {
        let mut request = agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(transport_failure)?;
        let status = response.status().as_u16();
        if status == 429 {
            return Err(BackendFailure::new(ErrorKind::RateLimited, "HTTP 429"));
        }
        if status >= 500 {
            return Err(BackendFailure::new(ErrorKind::Protocol, format!("HTTP {status}")).transient(true));
        }
        if status >= 400 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendFailure::new(ErrorKind::Refused, format!("HTTP {status}: {body}")));
        }
        response
            .body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| BackendFailure::new(ErrorKind::Protocol, format!("invalid JSON body: {e}")))
    }
}

fn transport_failure(err: ureq::Error) -> BackendFailure {
    match err {
        ureq::Error::Timeout(t) => BackendFailure::new(ErrorKind::Timeout, format!("timed out ({t})")),
        ureq::Error::Io(e) => BackendFailure::new(ErrorKind::Protocol, format!("I/O: {e}")).transient(true),
        ureq::Error::HostNotFound => BackendFailure::new(ErrorKind::Refused, "host not found"),
        other => BackendFailure::new(ErrorKind::Protocol, other.to_string()),
    }
}

pub struct HttpCompletionBackend {
    config: RemoteConfig,
    agent: Agent,
}

impl HttpCompletionBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = config.agent();
        Self { config, agent }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
}

impl CompletionBackend for HttpCompletionBackend {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendFailure> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.config.post(&self.agent, body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| BackendFailure::new(ErrorKind::Protocol, format!("unexpected response shape: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendFailure::new(ErrorKind::Protocol, "response has no message content"))?;
        Ok(BackendReply {
            text: content,
            usage: parsed
                .usage
                .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens }),
        })
    }
}

pub struct HttpEmbeddingBackend {
    config: RemoteConfig,
    dim: usize,
    agent: Agent,
}

impl HttpEmbeddingBackend {
    pub fn new(config: RemoteConfig, dim: usize) -> Self {
        let agent = config.agent();
        Self { config, dim, agent }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn id(&self) -> String {
        format!("http:{}:{}", self.config.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        let body = json!({"model": self.config.model, "input": texts});
        let value = self.config.post(&self.agent, body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| BackendFailure::new(ErrorKind::Protocol, format!("unexpected response shape: {e}")))?;
        let vectors: Vec<Vec<f64>> = parsed.data.into_iter().map(|d| d.embedding).collect();
        if let Some(bad) = vectors.iter().find(|v| v.len() != self.dim) {
            return Err(BackendFailure::new(
                ErrorKind::Protocol,
                format!("embedding has dim {}, configured {}", bad.len(), self.dim),
            ));
        }
        Ok(vectors)
    }
}
