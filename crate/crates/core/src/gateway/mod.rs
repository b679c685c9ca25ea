//! Pluggable LLM boundary.
//!
//! [`MockBackend`] answers from a scripted fixture and is what the tests and
//! the bundled scenarios run against. [`LiveBackend`] speaks the
//! OpenAI-compatible chat completions protocol. Both embed text with the
//! deterministic [`Embedder`].

mod embed;
mod live;
mod mock;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, l2_normalize, token_bag, tokenize, Embedder, DEFAULT_DIMENSION, DEFAULT_SEED};
pub use live::{LiveBackend, LiveSettings, API_KEY_ENV};
pub use mock::{Matcher, MockBackend, MockFixture, MockRule};

use crate::model::{ProblemFeatures, ProblemStatement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GatewayRequest {
    /// Single user message with deterministic sampling.
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage {
                role: Role::User,
                content: text.into(),
            }],
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

pub trait Gateway: Send + Sync {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError>;

    fn embed(&self, text: &str) -> Vec<f64>;

    fn embedder(&self) -> Embedder;

    fn features(&self, text: &str) -> ProblemFeatures {
        ProblemFeatures {
            vector: self.embed(text),
            tokens: token_bag(text),
        }
    }

    fn problem(&self, text: &str) -> ProblemStatement {
        ProblemStatement {
            text: text.to_string(),
            features: self.features(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "live" => Ok(BackendKind::Live),
            other => Err(format!("unknown backend {other:?} (expected mock or live)")),
        }
    }
}
