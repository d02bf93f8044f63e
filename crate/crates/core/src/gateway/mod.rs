//! Text-generation backends.
//!
//! Every model call in a run goes through a [`Gateway`], which numbers the
//! call, forwards it to a shared [`Backend`] and appends a [`CallRecord`] to
//! the run's call log. Three backends exist: [`LiveBackend`] speaks the HTTP
//! chat-completions wire format, [`ScriptedBackend`] answers from a regex
//! rulebook, and [`ReplayBackend`] serves responses from a recorded log.

mod live;
pub(crate) mod parse;
mod replay;
mod scripted;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use live::{LiveBackend, LiveConfig, RateLimiter, API_KEY_ENV, BASE_URL_ENV};
pub use parse::{parse_choice, ParseError};
pub use replay::{read_call_log, CallLog, CallLogError, CallLogHeader, ReplayBackend};
pub use scripted::{ResponseSpec, RuleSpec, RulebookError, ScriptRulebook, ScriptedBackend, WeightedResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

/// Why a call is being made. Closed set; rulebooks filter on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    ActionDecision,
    DialogueTurn,
    EndDecision,
    Summary,
    Reflection,
    Plan,
    InstrumentItem,
}

impl Purpose {
    pub const ALL: [Purpose; 7] = [
        Purpose::ActionDecision,
        Purpose::DialogueTurn,
        Purpose::EndDecision,
        Purpose::Summary,
        Purpose::Reflection,
        Purpose::Plan,
        Purpose::InstrumentItem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::ActionDecision => "action_decision",
            Purpose::DialogueTurn => "dialogue_turn",
            Purpose::EndDecision => "end_decision",
            Purpose::Summary => "summary",
            Purpose::Reflection => "reflection",
            Purpose::Plan => "plan",
            Purpose::InstrumentItem => "instrument_item",
        }
    }

    /// Decisions and test answers run cold; generative calls run warm.
    pub fn default_temperature(self) -> f64 {
        match self {
            Purpose::ActionDecision | Purpose::EndDecision | Purpose::InstrumentItem => 0.0,
            Purpose::DialogueTurn | Purpose::Summary | Purpose::Reflection | Purpose::Plan => 0.7,
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Purpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown purpose tag '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub purpose: Purpose,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub const DEFAULT_MAX_TOKENS: u32 = 256;

impl ChatRequest {
    pub fn new(purpose: Purpose, messages: Vec<Message>) -> Self {
        Self {
            messages,
            purpose,
            temperature: purpose.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// All message contents joined by blank lines; what rulebook patterns see.
    pub fn joined_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Stable hash of the purpose and whitespace-normalized message contents.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.purpose.as_str().as_bytes());
        for message in &self.messages {
            hasher.update([0u8]);
            hasher.update(message.role.as_str().as_bytes());
            hasher.update([0u8]);
            let normalized = message.content.split_whitespace().collect::<Vec<_>>().join(" ");
            hasher.update(normalized.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Identifies one call within one repetition of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext {
    pub repetition: u32,
    pub seq: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{purpose} call failed after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Exhausted {
        purpose: Purpose,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("{purpose} call returned an undecodable reply: {message}")]
    Decode { purpose: Purpose, message: String },
    #[error("no rulebook rule matches this {purpose} request")]
    NoRule { purpose: Purpose },
    #[error("replay log has no record for repetition {repetition} sequence {seq}")]
    ReplayMissing { repetition: u32, seq: u64 },
    #[error("replay record for repetition {repetition} sequence {seq} has digest {recorded}, request digest is {actual}")]
    ReplayMismatch {
        repetition: u32,
        seq: u64,
        recorded: String,
        actual: String,
    },
    /// Replays a failure from a recorded log with its original message.
    #[error("{message}")]
    RecordedFailure { purpose: Purpose, message: String },
}

/// A text-generation backend. Implementations must tolerate concurrent calls
/// from independent repetitions.
pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, ctx: &CallContext, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub repetition: u32,
    pub seq: u64,
    pub purpose: Purpose,
    pub digest: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// A warning raised while interpreting backend output (fallbacks, skipped work).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub agent: Option<String>,
    pub purpose: Purpose,
    pub message: String,
}

/// Per-repetition handle on a shared backend. Issues calls strictly in
/// sequence and keeps the call log.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    repetition: u32,
    seed: u64,
    next_seq: u64,
    max_tokens: u32,
    parse_retries: u32,
    records: Vec<CallRecord>,
    diagnostics: Vec<Diagnostic>,
}

pub const DEFAULT_PARSE_RETRIES: u32 = 3;

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, repetition: u32, seed: u64) -> Self {
        Self {
            backend,
            repetition,
            seed,
            next_seq: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
            parse_retries: DEFAULT_PARSE_RETRIES,
            records: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_parse_retries(mut self, retries: u32) -> Self {
        self.parse_retries = retries;
        self
    }

    pub fn repetition(&self) -> u32 {
        self.repetition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Retries allowed after a response fails to parse.
    pub fn parse_retries(&self) -> u32 {
        self.parse_retries
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn request(&self, purpose: Purpose, messages: Vec<Message>) -> ChatRequest {
        ChatRequest::new(purpose, messages).with_max_tokens(self.max_tokens)
    }

    pub fn complete(&mut self, request: ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let seq = self.next_seq;
        self.next_seq += 1;
        let ctx = CallContext { repetition: self.repetition, seq, seed: self.seed };
        let outcome = self.backend.complete(&ctx, &request);
        let (response, error, latency_ms) = match &outcome {
            Ok(c) => (Some(c.text.clone()), None, c.latency_ms),
            Err(e) => (None, Some(e.to_string()), 0),
        };
        self.records.push(CallRecord {
            repetition: self.repetition,
            seq,
            purpose: request.purpose,
            digest: request.digest(),
            request,
            response,
            error,
            latency_ms,
        });
        outcome.map(|c| c.text)
    }

    /// Calls the backend until `parse` accepts the reply, at most
    /// `1 + parse_retries` times. Backend errors are not retried here.
    pub fn complete_parsed<T>(
        &mut self,
        request: ChatRequest,
        mut parse: impl FnMut(&str) -> Option<T>,
    ) -> Result<Option<T>, GatewayError> {
        for _ in 0..=self.parse_retries {
            let text = self.complete(request.clone())?;
            if let Some(value) = parse(&text) {
                return Ok(Some(value));
            }
        }
        Ok(None)
    }

    pub fn warn(&mut self, agent: Option<&str>, purpose: Purpose, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{purpose}: {message}");
        self.diagnostics.push(Diagnostic {
            agent: agent.map(str::to_string),
            purpose,
            message,
        });
    }

    pub fn take_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }

    pub fn records(&self) -> &[CallRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CallRecord> {
        self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Backend for Echo {
        fn kind(&self) -> BackendKind {
            BackendKind::Scripted
        }

        fn complete(&self, ctx: &CallContext, request: &ChatRequest) -> Result<Completion, GatewayError> {
            Ok(Completion {
                text: format!("{}:{}", ctx.seq, request.messages[0].content),
                latency_ms: 0,
            })
        }
    }

    #[test]
    fn sequence_numbers_strictly_increase() {
        let mut gw = Gateway::new(Arc::new(Echo), 0, 1);
        for i in 0..5 {
            let req = gw.request(Purpose::Plan, vec![Message::user(format!("m{i}"))]);
            assert_eq!(gw.complete(req).unwrap(), format!("{i}:m{i}"));
        }
        let seqs: Vec<u64> = gw.records().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_request_is_rejected() {
        let mut gw = Gateway::new(Arc::new(Echo), 0, 1);
        let req = gw.request(Purpose::Plan, vec![]);
        assert!(matches!(gw.complete(req), Err(GatewayError::InvalidRequest(_))));
        assert!(gw.records().is_empty());
    }

    #[test]
    fn digest_ignores_whitespace_layout() {
        let a = ChatRequest::new(Purpose::Summary, vec![Message::user("hello   world\n")]);
        let b = ChatRequest::new(Purpose::Summary, vec![Message::user(" hello world")]);
        let c = ChatRequest::new(Purpose::Reflection, vec![Message::user("hello world")]);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn purpose_round_trips_through_str() {
        for p in Purpose::ALL {
            assert_eq!(p.as_str().parse::<Purpose>().unwrap(), p);
        }
        assert!("chat".parse::<Purpose>().is_err());
    }

    #[test]
    fn temperatures_follow_purpose() {
        assert_eq!(Purpose::ActionDecision.default_temperature(), 0.0);
        assert_eq!(Purpose::InstrumentItem.default_temperature(), 0.0);
        assert_eq!(Purpose::DialogueTurn.default_temperature(), 0.7);
    }
}
