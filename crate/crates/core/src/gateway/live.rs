//! OpenAI-compatible HTTP backend.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Embedder, Gateway, GatewayError, GatewayRequest};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "METHODFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveSettings {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_model: None,
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

pub struct LiveBackend {
    settings: LiveSettings,
    api_key: Option<String>,
    embedder: Embedder,
    client: Client,
}

enum Failure {
    Transient(String),
    Fatal(GatewayError),
}

impl LiveBackend {
    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(settings: LiveSettings, embedder: Embedder) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok();
        Self::new(settings, key, embedder)
    }

    pub fn new(
        settings: LiveSettings,
        api_key: Option<String>,
        embedder: Embedder,
    ) -> Result<Self, GatewayError> {
        if settings.max_attempts == 0 {
            return Err(GatewayError::Config("max_attempts must be at least 1".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_millis(settings.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            settings,
            api_key,
            embedder,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            let text = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(GatewayError::Config(format!("HTTP {status}: {text}"))));
        }
        resp.json::<Value>()
            .map_err(|e| Failure::Transient(format!("invalid response body: {e}")))
    }

    /// POSTs with exponential backoff on transient failures.
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.url(path);
        let mut delay = Duration::from_millis(self.settings.backoff_ms);
        let mut last = String::new();
        for attempt in 1..=self.settings.max_attempts {
            match self.post_once(&url, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    tracing::warn!(attempt, %url, "transient gateway failure: {msg}");
                    last = msg;
                    if attempt < self.settings.max_attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.settings.max_attempts,
            message: last,
        })
    }

    /// Calls the remote `/embeddings` endpoint. The repository keeps using the
    /// hashed embedder so that stored features stay comparable.
    pub fn embed_remote(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let model = self
            .settings
            .embedding_model
            .as_deref()
            .ok_or_else(|| GatewayError::Config("no embedding_model configured".into()))?;
        let body = json!({ "model": model, "input": text });
        let value = self.post("embeddings", &body)?;
        value["data"][0]["embedding"]
            .as_array()
            .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| GatewayError::Transport {
                attempts: 1,
                message: "embedding missing from response".into(),
            })
    }
}

impl Gateway for LiveBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": self.settings.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport {
                attempts: 1,
                message: "completion content missing from response".into(),
            })
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    fn embedder(&self) -> Embedder {
        self.embedder
    }
}
