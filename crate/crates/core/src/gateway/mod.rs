//! Backend-agnostic chat completion.
//!
//! [`Gateway`] wraps one configured backend: either an OpenAI-compatible HTTP
//! endpoint or one of the deterministic mocks used for testing. Every request
//! passing through the gateway must be greedy (temperature 0).

mod mock;
mod openai;
mod ratelimit;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategy::{Message, Role};

pub use mock::{MockDictionary, MockIdentity, MockTailDropper};
pub use openai::{
    chat_completions_url, HttpReply, HttpTransport, OpenAiBackend, ReqwestTransport, RetryPolicy,
};
pub use ratelimit::TokenBucket;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request {tag} has temperature {temperature}; only greedy (0) requests are allowed")]
    NonGreedy { tag: String, temperature: f64 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request exceeds the model context: {0}")]
    ContextLength(String),
    #[error("giving up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid backend config {name}: {message}")]
    Config { name: String, message: String },
    #[error("failed to build HTTP client: {0}")]
    Client(String),
}

impl GatewayError {
    /// Errors caused by configuration rather than a failed exchange.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            GatewayError::MissingApiKey(_) | GatewayError::Config { .. } | GatewayError::Client(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub request_tag: String,
    /// Source segments this request asks to have translated. Local metadata
    /// (mocks read it); never sent over the wire.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_segments: Vec<String>,
}

impl ChatRequest {
    pub fn greedy(request_tag: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_id: String::new(),
            messages,
            temperature: 0.0,
            max_tokens: None,
            request_tag: request_tag.into(),
            source_segments: Vec::new(),
        }
    }

    pub fn with_source(mut self, segments: Vec<String>) -> Self {
        self.source_segments = segments;
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn last_user_message(&self) -> Option<&Message> {
        self.messages.iter().rev().find(|m| m.role == Role::User)
    }

    /// What a mock should translate: the source metadata when present,
    /// otherwise the final user message as a single segment.
    pub fn source_text_segments(&self) -> Vec<String> {
        if !self.source_segments.is_empty() {
            return self.source_segments.clone();
        }
        self.last_user_message()
            .map(|m| vec![m.content.clone()])
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_api(value: Option<&str>) -> Self {
        match value {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub finish_reason: FinishReason,
    pub latency_ms: f64,
    /// Retries spent before this response was obtained.
    #[serde(default)]
    pub retries: u32,
}

/// A chat-completion backend.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompatible,
    MockIdentity,
    MockDictionary,
    MockTailDropper,
}

impl BackendKind {
    pub fn is_mock(self) -> bool {
        self != BackendKind::OpenaiCompatible
    }
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Label used in reports and artifact paths.
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    /// Context window in ledger tokens; sessions that would exceed it fail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Base backoff delay; defaults to one second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_base_ms: Option<u64>,
    /// JSON object mapping source tokens to target tokens (mock_dictionary).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    /// Fraction of trailing tokens dropped on single-turn requests (mock_tail_dropper).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_fraction: Option<f64>,
}

impl BackendConfig {
    pub fn mock(name: &str, kind: BackendKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            model: String::new(),
            base_url: None,
            api_key_env: None,
            max_retries: default_max_retries(),
            requests_per_minute: None,
            max_tokens: None,
            context_limit: None,
            timeout_secs: None,
            backoff_base_ms: None,
            dictionary: None,
            drop_fraction: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |message: String| GatewayError::Config {
            name: self.name.clone(),
            message,
        };
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(bad(
                "name must be non-empty and use only [A-Za-z0-9._-]".into()
            ));
        }
        if let Some(f) = self.drop_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(bad(format!("drop_fraction {f} is outside [0, 1)")));
            }
        }
        if self.requests_per_minute == Some(0) {
            return Err(bad("requests_per_minute must be positive".into()));
        }
        match self.kind {
            BackendKind::OpenaiCompatible => {
                if self.base_url.is_none() {
                    return Err(bad("base_url is required".into()));
                }
                if self.api_key_env.is_none() {
                    return Err(bad("api_key_env is required".into()));
                }
                if self.model.is_empty() {
                    return Err(bad("model is required".into()));
                }
            }
            BackendKind::MockDictionary if self.dictionary.is_none() => {
                return Err(bad("dictionary is required".into()));
            }
            BackendKind::MockTailDropper if self.drop_fraction.is_none() => {
                return Err(bad("drop_fraction is required".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        let mut policy = RetryPolicy::default();
        if let Some(ms) = self.backoff_base_ms {
            policy.base = Duration::from_millis(ms);
        }
        policy
    }
}

/// A configured backend plus the greedy check and shared rate limiter.
#[derive(Clone)]
pub struct Gateway {
    name: String,
    model: String,
    max_tokens: Option<u32>,
    backend: Arc<dyn ChatBackend>,
    limiter: Option<Arc<TokenBucket>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("name", &self.name)
            .field("model", &self.model)
            .finish()
    }
}

impl Gateway {
    /// Builds the backend. For HTTP backends the API key is read from the
    /// environment here, so a missing key fails before any request is sent.
    pub fn connect(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend: Arc<dyn ChatBackend> = match cfg.kind {
            BackendKind::MockIdentity => Arc::new(MockIdentity),
            BackendKind::MockDictionary => Arc::new(MockDictionary::load(
                cfg.dictionary.as_deref().expect("validated"),
            )?),
            BackendKind::MockTailDropper => {
                Arc::new(MockTailDropper::new(cfg.drop_fraction.expect("validated")))
            }
            BackendKind::OpenaiCompatible => Arc::new(OpenAiBackend::from_config(cfg)?),
        };
        Ok(Self {
            name: cfg.name.clone(),
            model: cfg.model.clone(),
            max_tokens: cfg.max_tokens,
            backend,
            limiter: cfg
                .requests_per_minute
                .map(|rpm| Arc::new(TokenBucket::per_minute(rpm))),
        })
    }

    pub fn from_backend(name: &str, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            name: name.to_string(),
            model: String::new(),
            max_tokens: None,
            backend,
            limiter: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if req.temperature != 0.0 {
            return Err(GatewayError::NonGreedy {
                tag: req.request_tag.clone(),
                temperature: req.temperature,
            });
        }
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let fill_model = req.model_id.is_empty() && !self.model.is_empty();
        let fill_max = req.max_tokens.is_none() && self.max_tokens.is_some();
        if !(fill_model || fill_max) {
            return self.backend.complete(req);
        }
        let mut filled = req.clone();
        if fill_model {
            filled.model_id = self.model.clone();
        }
        if fill_max {
            filled.max_tokens = self.max_tokens;
        }
        self.backend.complete(&filled)
    }
}

/// One-shot convenience: connect and complete a single request.
pub fn complete(req: &ChatRequest, cfg: &BackendConfig) -> Result<ChatResponse, GatewayError> {
    Gateway::connect(cfg)?.complete(req)
}
