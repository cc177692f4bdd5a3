//! OpenAI-compatible `POST /v1/chat/completions` backend with retries.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, ChatBackend, ChatRequest, ChatResponse, FinishReason, GatewayError};

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            max: Duration::from_secs(60),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the delay before retry number `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt.min(64) as i32);
        Duration::from_secs_f64(secs.min(self.max.as_secs_f64()))
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ceiling = self.ceiling(attempt);
        if !self.jitter || ceiling.is_zero() {
            return ceiling;
        }
        Duration::from_secs_f64(rand::rng().random_range(0.0..=ceiling.as_secs_f64()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking JSON POST, so retry logic can be tested without a network.
pub trait HttpTransport: Send + Sync {
    /// `Err` means the exchange itself failed (connect, timeout, ...).
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
    ) -> Result<HttpReply, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Client(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
    ) -> Result<HttpReply, String> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// `base_url` may be the server root or already end in `/v1`.
pub fn chat_completions_url(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct OpenAiBackend {
    url: String,
    api_key: String,
    model: String,
    max_retries: u32,
    policy: RetryPolicy,
    transport: Box<dyn HttpTransport>,
    sleep: Sleeper,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let var = cfg.api_key_env.as_deref().unwrap_or_default();
        let api_key = match std::env::var(var) {
            Ok(key) if !key.is_empty() => key,
            _ => return Err(GatewayError::MissingApiKey(var.to_string())),
        };
        let timeout = Duration::from_secs(cfg.timeout_secs.unwrap_or(300));
        Ok(Self::new(
            cfg.base_url.as_deref().unwrap_or_default(),
            api_key,
            &cfg.model,
            cfg.max_retries,
            cfg.retry_policy(),
            Box::new(ReqwestTransport::new(timeout)?),
        ))
    }

    pub fn new(
        base_url: &str,
        api_key: String,
        model: &str,
        max_retries: u32,
        policy: RetryPolicy,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        Self {
            url: chat_completions_url(base_url),
            api_key,
            model: model.to_string(),
            max_retries,
            policy,
            transport,
            sleep: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces `std::thread::sleep` for backoff waits.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    fn body(&self, req: &ChatRequest) -> serde_json::Value {
        let model = if req.model_id.is_empty() {
            &self.model
        } else {
            &req.model_id
        };
        let mut body = json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        if let Some(max) = req.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn parse(body: &str) -> Result<(String, FinishReason, u64, u64), GatewayError> {
        let parsed: ApiResponse =
            serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Malformed("no choices".into()))?;
        let usage = parsed.usage.unwrap_or(ApiUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok((
            choice.message.content.unwrap_or_default(),
            FinishReason::from_api(choice.finish_reason.as_deref()),
            usage.prompt_tokens,
            usage.completion_tokens,
        ))
    }
}

fn is_context_error(body: &str) -> bool {
    body.contains("context_length_exceeded") || body.contains("maximum context length")
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.body(req);
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            let last = match self.transport.post_json(&self.url, &self.api_key, &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let (content, finish_reason, prompt_tokens, completion_tokens) =
                        Self::parse(&reply.body)?;
                    return Ok(ChatResponse {
                        content,
                        prompt_tokens,
                        completion_tokens,
                        finish_reason,
                        latency_ms: started.elapsed().as_secs_f64() * 1e3,
                        retries: attempt,
                    });
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    format!("HTTP {}: {}", reply.status, reply.body)
                }
                Ok(reply) => {
                    if reply.status == 400 && is_context_error(&reply.body) {
                        return Err(GatewayError::ContextLength(reply.body));
                    }
                    return Err(GatewayError::Http {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Err(transport) => transport,
            };
            if attempt >= self.max_retries {
                return Err(GatewayError::RetriesExhausted {
                    attempts: attempt + 1,
                    last,
                });
            }
            log::warn!("{}: retrying after failure: {last}", req.request_tag);
            (self.sleep)(self.policy.delay(attempt));
            attempt += 1;
        }
    }
}
