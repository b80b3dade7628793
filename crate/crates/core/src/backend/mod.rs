//! Model inference boundary.
//!
//! A [`Backend`] knows how to perform one attempt; an [`Endpoint`] wraps a
//! backend with its [`EndpointConfig`], retries, fan-out and the transcript.
//!
//! Calls are split in two phases. [`Backend::dispatch`] runs sequentially in
//! input order and returns an [`Attempt`] closure; only the closures run
//! concurrently. Scripted backends pick their reply during dispatch, which is
//! what keeps `complete_many` deterministic under arbitrary completion order.

mod http;
mod scripted;
mod transcript;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use scripted::{Reply, Rule, Script, ScriptError, ScriptedBackend};
pub use transcript::{Transcript, TranscriptEntry};

use crate::prompts::RenderedPrompt;

/// Default number of in-flight requests per `complete_many`.
pub const DEFAULT_PARALLELISM: usize = 5;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Name of the environment variable holding the API key (never the key).
    pub api_key_env: Option<String>,
    /// Base delay of the exponential retry backoff.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            max_retries: 2,
            api_key_env: None,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidConfig(m));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_retries > 5 {
            return bad(format!("max_retries must be <= 5, got {}", self.max_retries));
        }
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be positive".into());
        }
        if self.base_url.trim().is_empty() {
            return bad("base_url must be set".into());
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name must be set".into());
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub prompt_hash: String,
    pub output: String,
    /// Wall time of the successful attempt, in milliseconds.
    pub latency: u64,
    pub attempt: u32,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
    #[error("empty prompt")]
    EmptyPrompt,
}

/// Outcome of a single attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    /// Connection-level failure; retried.
    Transport(String),
    /// The server answered with a non-success status; not retried.
    Status { code: u16, body: String },
    /// The server answered but the payload could not be understood.
    Malformed(String),
}

impl std::fmt::Display for AttemptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttemptError::Transport(m) => write!(f, "transport error: {m}"),
            AttemptError::Status { code, body } => write!(f, "status {code}: {body}"),
            AttemptError::Malformed(m) => write!(f, "malformed response: {m}"),
        }
    }
}

/// One prepared request; may be invoked again for each retry.
pub type Attempt = Box<dyn Fn() -> Result<String, AttemptError> + Send + Sync>;

pub trait Backend: Send + Sync {
    /// Short identifier recorded in transcripts and run metadata.
    fn id(&self) -> String;

    /// Prepares a request. Called sequentially, in input order.
    fn dispatch(&self, config: &EndpointConfig, prompt: &RenderedPrompt) -> Attempt;
}

/// A backend bound to its configuration and transcript.
#[derive(Clone)]
pub struct Endpoint {
    backend: Arc<dyn Backend>,
    config: EndpointConfig,
    transcript: Arc<Transcript>,
    parallelism: usize,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("backend", &self.backend.id())
            .field("config", &self.config)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Endpoint {
    pub fn new(backend: Arc<dyn Backend>, config: EndpointConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self {
            backend,
            config,
            transcript: Arc::new(Transcript::in_memory()),
            parallelism: DEFAULT_PARALLELISM,
        })
    }

    /// Scripted endpoint with default configuration and no retry delay.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        let config = EndpointConfig {
            backoff_ms: 0,
            ..EndpointConfig::default()
        };
        Self::new(Arc::new(backend), config).expect("default config is valid")
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = transcript;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let attempt = self.backend.dispatch(&self.config, prompt);
        self.run(&prompt.prompt_hash(), &attempt)
    }

    /// Results are aligned with `prompts`; each slot fails independently.
    pub fn complete_many(&self, prompts: &[RenderedPrompt]) -> Vec<Result<Completion, BackendError>> {
        let jobs: Vec<Option<(String, Attempt)>> = prompts
            .iter()
            .map(|p| (!p.text.is_empty()).then(|| (p.prompt_hash(), self.backend.dispatch(&self.config, p))))
            .collect();
        let slots: Vec<Mutex<Option<Result<Completion, BackendError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.parallelism.min(jobs.len()).max(1);

        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let result = match job {
                        Some((hash, attempt)) => self.run(hash, attempt),
                        None => Err(BackendError::EmptyPrompt),
                    };
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });

        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }

    fn run(&self, prompt_hash: &str, attempt: &Attempt) -> Result<Completion, BackendError> {
        let backend_id = self.backend.id();
        let total = self.config.max_retries + 1;
        let mut last_error = String::new();
        for n in 1..=total {
            if n > 1 {
                thread::sleep(self.config.backoff(n - 1));
            }
            let started = Instant::now();
            let result = attempt();
            let latency = started.elapsed().as_millis() as u64;
            match result {
                Ok(output) => {
                    self.transcript
                        .record(&backend_id, prompt_hash, &output, latency, n, None);
                    return Ok(Completion {
                        prompt_hash: prompt_hash.to_string(),
                        output,
                        latency,
                        attempt: n,
                        backend_id,
                    });
                }
                Err(err) => {
                    let msg = err.to_string();
                    self.transcript
                        .record(&backend_id, prompt_hash, "", latency, n, Some(&msg));
                    match err {
                        AttemptError::Transport(_) => {
                            tracing::debug!(attempt = n, error = %msg, "retrying model call");
                            last_error = msg;
                        }
                        AttemptError::Status { .. } | AttemptError::Malformed(_) => {
                            return Err(BackendError::BadResponse(msg));
                        }
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts: total,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptKind;

    fn prompt(text: &str) -> RenderedPrompt {
        RenderedPrompt::new(PromptKind::Judge, text.to_string(), "code")
    }

    #[test]
    fn config_validation() {
        assert!(EndpointConfig::default().validate().is_ok());
        let neg = EndpointConfig {
            temperature: -0.1,
            ..EndpointConfig::default()
        };
        assert!(neg.validate().is_err());
        let retries = EndpointConfig {
            max_retries: 6,
            ..EndpointConfig::default()
        };
        assert!(retries.validate().is_err());
        let tokens = EndpointConfig {
            max_tokens: 0,
            ..EndpointConfig::default()
        };
        assert!(tokens.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let c = EndpointConfig {
            backoff_ms: 100,
            ..EndpointConfig::default()
        };
        assert_eq!(c.backoff(1), Duration::from_millis(100));
        assert_eq!(c.backoff(3), Duration::from_millis(400));
        assert_eq!(c.backoff(30), MAX_BACKOFF);
    }

    #[test]
    fn transport_failures_are_retried_then_unavailable() {
        let script = ScriptedBackend::new().on_contains("x", vec![Reply::transport_failure("down")]);
        let mut ep = Endpoint::scripted(script);
        ep.config.max_retries = 2;
        let err = ep.complete(&prompt("x")).unwrap_err();
        assert_eq!(
            err,
            BackendError::Unavailable {
                attempts: 3,
                last_error: "transport error: down".into()
            }
        );
        let attempts: Vec<u32> = ep.transcript().entries().iter().map(|e| e.attempt).collect();
        assert_eq!(attempts, vec![1, 2, 3]);
    }

    #[test]
    fn status_errors_are_not_retried() {
        let script = ScriptedBackend::new().on_contains("x", vec![Reply::status_failure(500)]);
        let ep = Endpoint::scripted(script);
        assert!(matches!(ep.complete(&prompt("x")), Err(BackendError::BadResponse(_))));
        assert_eq!(ep.transcript().entries().len(), 1);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let ep = Endpoint::scripted(ScriptedBackend::new().with_default("ok"));
        assert_eq!(ep.complete(&prompt("")), Err(BackendError::EmptyPrompt));
        assert!(ep.complete_many(&[]).is_empty());
    }
}
