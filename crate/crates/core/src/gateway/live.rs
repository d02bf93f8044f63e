use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendKind, CallContext, ChatRequest, Completion, GatewayError};

pub const API_KEY_ENV: &str = "AFSPP_API_KEY";
pub const BASE_URL_ENV: &str = "AFSPP_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
    /// Shared request budget across all repetitions; `None` means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<f64>,
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_model() -> String {
    "gpt-4".into()
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_initial_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: default_base_url(),
            model: default_model(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_initial_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
            requests_per_minute: None,
        }
    }
}

impl LiveConfig {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.min(32)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Token bucket shared by every repetition using one backend.
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: f64) -> Self {
        let per_second = requests / 60.0;
        let capacity = per_second.max(1.0);
        Self { per_second, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// HTTP chat-completions client with retry, backoff and a per-call timeout.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

enum Attempt {
    Done(Result<Completion, GatewayError>),
    Retry { status: Option<u16>, message: String, after: Option<Duration> },
}

impl LiveBackend {
    pub fn new(config: LiveConfig, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(Self { config, api_key: api_key.into(), client, limiter })
    }

    /// Reads the API key (required) and base-URL override from the environment.
    pub fn from_env(mut config: LiveConfig) -> Result<Self, String> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| format!("{API_KEY_ENV} is not set"))?;
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.trim().is_empty() {
                config.base_url = url;
            }
        }
        Self::new(config, key).map_err(|e| e.to_string())
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let started = Instant::now();
        let response = match self.client.post(self.config.endpoint()).bearer_auth(&self.api_key).json(&body).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry { status: None, message: e.to_string(), after: None },
        };
        let status = response.status();
        if status.is_success() {
            let latency_ms = started.elapsed().as_millis() as u64;
            let decoded = response
                .json::<WireReply>()
                .map_err(|e| e.to_string())
                .and_then(|reply| {
                    reply
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| "reply has no first choice content".to_string())
                });
            return Attempt::Done(
                decoded
                    .map(|text| Completion { text, latency_ms })
                    .map_err(|message| GatewayError::Decode { purpose: request.purpose, message }),
            );
        }
        let code = status.as_u16();
        let after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let message = response.text().unwrap_or_default();
        if code == 408 || code == 429 || status.is_server_error() {
            Attempt::Retry { status: Some(code), message, after }
        } else {
            Attempt::Done(Err(GatewayError::Exhausted {
                purpose: request.purpose,
                attempts: 1,
                status: Some(code),
                message,
            }))
        }
    }
}

impl Backend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, _ctx: &CallContext, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.attempt(request) {
                Attempt::Done(Err(GatewayError::Exhausted { purpose, status, message, .. })) => {
                    return Err(GatewayError::Exhausted { purpose, attempts: attempt + 1, status, message });
                }
                Attempt::Done(result) => return result,
                Attempt::Retry { status, message, after } => {
                    log::debug!("{} attempt {} failed: {:?} {}", request.purpose, attempt + 1, status, message);
                    last_status = status;
                    last_message = message;
                    if attempt < self.config.max_retries {
                        let backoff = self.config.backoff(attempt);
                        let delay = after.map_or(backoff, |a| a.min(Duration::from_millis(self.config.max_backoff_ms)).max(backoff));
                        std::thread::sleep(delay);
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            purpose: request.purpose,
            attempts: self.config.max_retries + 1,
            status: last_status,
            message: last_message,
        })
    }
}
