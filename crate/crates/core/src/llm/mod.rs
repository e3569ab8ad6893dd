//! Chat gateway: one request shape over a live HTTP backend and a
//! record/replay cassette backend.

mod cassette;
mod http;
pub mod tokens;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use self::cassette::{Cassette, CassetteMeta, RecordingBackend, ReplayBackend};
pub use self::http::{HttpBackend, HttpConfig, HttpResponse, RateGate, ReqwestTransport, RetryPolicy, Transport, TransportError};
pub use self::tokens::{SegmentCounter, TokenCounter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("rate limited by backend")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("no cassette entry for fingerprint {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    messages: &'a [Message],
    model: &'a str,
    temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(LlmError::InvalidRequest("system message must come first".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// Lowercase hex SHA-256 of the compact JSON
    /// `{"messages":[{"role":..,"content":..}],"model":..,"temperature":..}`.
    pub fn fingerprint(&self) -> String {
        let input = FingerprintInput { messages: &self.messages, model: &self.model, temperature: self.temperature };
        let bytes = serde_json::to_vec(&input).expect("fingerprint input serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self { model: "gpt-4o-2024-05-13".to_string(), temperature: 0.0, max_output_tokens: 2048 }
    }
}

/// Backend plus request defaults, shared by every pipeline stage.
pub struct Llm {
    backend: Arc<dyn ChatBackend>,
    settings: ChatSettings,
    calls: AtomicUsize,
}

impl Llm {
    pub fn new(backend: Arc<dyn ChatBackend>, settings: ChatSettings) -> Self {
        Self { backend, settings, calls: AtomicUsize::new(0) }
    }

    pub fn settings(&self) -> &ChatSettings {
        &self.settings
    }

    /// Number of chat calls issued so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest { messages, model: self.settings.model.clone(), temperature: self.settings.temperature, max_output_tokens: self.settings.max_output_tokens }
    }

    pub fn chat(&self, messages: Vec<Message>) -> Result<String, LlmError> {
        let request = self.request(messages);
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.backend.chat(&request)
    }

    pub fn ask(&self, system: &str, user: &str) -> Result<String, LlmError> {
        self.chat(vec![Message::system(system), Message::user(user)])
    }
}
