//! Uniform access to completion and embedding backends.
//!
//! Every call goes through [`Gateway`], which owns retries with exponential
//! backoff, a cap on in-flight requests, and an append-only call log. The
//! gateway never rewrites backend text beyond trimming trailing whitespace.

mod http;
mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpCompletionBackend, HttpEmbeddingBackend, RemoteConfig};
pub use mock::{FailSpec, MockAction, MockBackend, MockRule, MockRuleSet, MockRuleSpec};

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    /// Originating `(dimension, step)` identity, e.g. `gathering/team_type`.
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// What a backend hands back before the gateway post-processes it.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Timeout,
    RateLimited,
    Protocol,
    Refused,
    MockUnmatched,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Timeout => "timeout",
            ErrorKind::RateLimited => "rate_limited",
            ErrorKind::Protocol => "protocol",
            ErrorKind::Refused => "refused",
            ErrorKind::MockUnmatched => "mock_unmatched",
        };
        f.write_str(s)
    }
}

/// A single failed attempt, as reported by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendFailure {
    pub kind: ErrorKind,
    pub detail: String,
    /// Whether retrying may help. Timeouts and rate limits always are.
    pub transient: bool,
}

impl BackendFailure {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        let transient = matches!(kind, ErrorKind::Timeout | ErrorKind::RateLimited);
        Self { kind, detail: detail.into(), transient }
    }

    pub fn transient(mut self, transient: bool) -> Self {
        self.transient = transient;
        self
    }
}

/// Final failure after the gateway gave up.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} after {attempts} attempt(s): {detail}")]
pub struct BackendError {
    pub kind: ErrorKind,
    pub attempts: u32,
    pub detail: String,
}

pub trait CompletionBackend: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendFailure>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Stable identity (model and dimension); part of cache keys.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Raw, not necessarily normalized, vectors; one per input text.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    /// Relative jitter applied to each delay, `0.2` means ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 500, jitter: 0.2 }
    }
}

impl RetryPolicy {
    /// Policy without sleeping between attempts; handy in tests.
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_delay_ms: 0, jitter: 0.0 }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`.
    pub fn delay(&self, attempt: u32) -> Duration {
        if self.base_delay_ms == 0 {
            return Duration::ZERO;
        }
        let base = self.base_delay_ms as f64 * 2f64.powi(attempt.min(16) as i32);
        let factor = if self.jitter > 0.0 {
            rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_millis((base * factor).round() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Complete,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    Failed(ErrorKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub tag: String,
    pub attempts: u32,
    pub outcome: CallOutcome,
}

/// Counting semaphore capping in-flight backend requests.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct PermitGuard<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        PermitGuard(self)
    }
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    completion: Arc<dyn CompletionBackend>,
    embedding: Option<Arc<dyn EmbeddingBackend>>,
    policy: RetryPolicy,
    permits: Permits,
    log: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.completion.model())
            .field("embedder", &self.embedder_id())
            .field("policy", &self.policy)
            .finish()
    }
}

impl Gateway {
    pub fn new(completion: Arc<dyn CompletionBackend>) -> Self {
        Self {
            completion,
            embedding: None,
            policy: RetryPolicy::default(),
            permits: Permits::new(4),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_embedder(mut self, embedding: Arc<dyn EmbeddingBackend>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.permits = Permits::new(n);
        self
    }

    pub fn model(&self) -> &str {
        self.completion.model()
    }

    pub fn embedder_id(&self) -> Option<String> {
        self.embedding.as_ref().map(|e| e.id())
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding.as_ref().map(|e| e.dim())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        if request.prompt.trim().is_empty() {
            return Err(BackendError {
                kind: ErrorKind::Refused,
                attempts: 0,
                detail: "empty prompt".into(),
            });
        }
        let started = Instant::now();
        let backend = &self.completion;
        let outcome = self.with_retries(|| backend.complete(request));
        match outcome {
            Ok((reply, attempts)) => {
                self.record(CallKind::Complete, &request.tag, attempts, CallOutcome::Ok);
                Ok(CompletionResult {
                    text: reply.text.trim_end().to_string(),
                    usage: reply.usage,
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempts,
                })
            }
            Err(err) => {
                self.record(CallKind::Complete, &request.tag, err.attempts, CallOutcome::Failed(err.kind));
                Err(err)
            }
        }
    }

    /// Raw embeddings for `texts`, in order. Normalization is the caller's
    /// business (see [`crate::retrieval::embed`]).
    pub fn embed(&self, texts: &[&str], tag: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        let Some(backend) = self.embedding.as_ref() else {
            return Err(BackendError {
                kind: ErrorKind::Refused,
                attempts: 0,
                detail: "no embedding backend configured".into(),
            });
        };
        let outcome = self.with_retries(|| {
            let vectors = backend.embed(texts)?;
            if vectors.len() != texts.len() {
                return Err(BackendFailure::new(
                    ErrorKind::Protocol,
                    format!("expected {} embeddings, got {}", texts.len(), vectors.len()),
                ));
            }
            Ok(vectors)
        });
        match outcome {
            Ok((vectors, attempts)) => {
                self.record(CallKind::Embed, tag, attempts, CallOutcome::Ok);
                Ok(vectors)
            }
            Err(err) => {
                self.record(CallKind::Embed, tag, err.attempts, CallOutcome::Failed(err.kind));
                Err(err)
            }
        }
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self, kind: CallKind) -> usize {
        self.log.lock().unwrap().iter().filter(|r| r.kind == kind).count()
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendFailure>,
    ) -> Result<(T, u32), BackendError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire();
                call()
            };
            attempt += 1;
            match result {
                Ok(value) => return Ok((value, attempt)),
                Err(failure) => {
                    let retries_used = attempt - 1;
                    if !failure.transient || retries_used >= self.policy.max_retries {
                        return Err(BackendError {
                            kind: failure.kind,
                            attempts: attempt,
                            detail: failure.detail,
                        });
                    }
                    tracing::debug!(kind = %failure.kind, attempt, "transient backend failure, retrying");
                    std::thread::sleep(self.policy.delay(retries_used));
                }
            }
        }
    }

    fn record(&self, kind: CallKind, tag: &str, attempts: u32, outcome: CallOutcome) {
        self.log.lock().unwrap().push(CallRecord { kind, tag: tag.to_string(), attempts, outcome });
    }
}
