//! Chat-completion client abstraction.
//!
//! Four backends share one [`LlmClient`] interface: hosted and local HTTP
//! servers speaking the chat-completions JSON shape, a replay file keyed by
//! request fingerprint, and a rule-based scripted backend. The last two are
//! fully deterministic and are what the test suites run against.

mod http;
mod replay;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use replay::{fingerprint, record_replay, RecordingClient, ReplayBackend, ReplayEntry};
pub use scripted::{ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}: {1}")]
    HttpStatus(u16, String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("no replay entry for fingerprint {0}")]
    MissingReplayEntry(String),
    #[error("no scripted rule matched the request")]
    NoRuleMatched,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_id: &str, system_text: String, user_text: String) -> Self {
        Self {
            model_id: model_id.to_owned(),
            system_text,
            user_text,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.is_empty() {
            return Err(LlmError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.model_id, &self.system_text, &self.user_text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// Dispatch to full receipt. Replayed responses carry the recorded value.
    pub latency: Duration,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Anything that can answer a chat request. Implementations must be safe to
/// call from several threads at once.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    LocalHttp,
    Replay,
    Scripted,
}

fn default_timeout_secs() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend: BackendKind,
    /// Model name sent on the wire; defaults to the configured model id.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Dotted path to the reply text, e.g. `choices.0.message.content`.
    #[serde(default)]
    pub response_path: Option<String>,
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn new(backend: BackendKind) -> Self {
        Self {
            backend,
            model: None,
            endpoint_url: None,
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
            response_path: None,
            replay_path: None,
            script_path: None,
        }
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        Self {
            replay_path: Some(path.into()),
            ..Self::new(BackendKind::Replay)
        }
    }

    pub fn scripted(path: impl Into<PathBuf>) -> Self {
        Self {
            script_path: Some(path.into()),
            ..Self::new(BackendKind::Scripted)
        }
    }

    pub fn http(backend: BackendKind, endpoint_url: &str) -> Self {
        Self {
            endpoint_url: Some(endpoint_url.to_owned()),
            ..Self::new(backend)
        }
    }

    /// True for backends that never touch the network.
    pub fn is_offline(&self) -> bool {
        matches!(self.backend, BackendKind::Replay | BackendKind::Scripted)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.backend {
            BackendKind::RemoteHttp | BackendKind::LocalHttp if self.endpoint_url.is_none() => {
                Err(LlmError::Config("http backends require endpoint_url".into()))
            }
            BackendKind::Replay if self.replay_path.is_none() => {
                Err(LlmError::Config("replay backend requires replay_path".into()))
            }
            BackendKind::Scripted if self.script_path.is_none() => {
                Err(LlmError::Config("scripted backend requires script_path".into()))
            }
            _ if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) => {
                Err(LlmError::Config("timeout_secs must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A client built from a [`ProviderConfig`].
pub enum Provider {
    Http(HttpBackend),
    Replay(ReplayBackend),
    Scripted(ScriptedBackend),
}

impl Provider {
    pub fn from_config(config: &ProviderConfig) -> Result<Provider, LlmError> {
        config.validate()?;
        Ok(match config.backend {
            BackendKind::RemoteHttp | BackendKind::LocalHttp => Provider::Http(HttpBackend::from_config(config)?),
            BackendKind::Replay => {
                Provider::Replay(ReplayBackend::load(config.replay_path.as_deref().expect("validated"))?)
            }
            BackendKind::Scripted => Provider::Scripted(ScriptedBackend::load(
                config.script_path.as_deref().expect("validated"),
            )?),
        })
    }
}

impl LlmClient for Provider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        match self {
            Provider::Http(b) => b.complete(request),
            Provider::Replay(b) => b.complete(request),
            Provider::Scripted(b) => b.complete(request),
        }
    }
}

/// One-shot completion against a provider config.
pub fn complete(request: &ChatRequest, config: &ProviderConfig) -> Result<ChatResponse, LlmError> {
    Provider::from_config(config)?.complete(request)
}
