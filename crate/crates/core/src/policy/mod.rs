//! Text-generation backends: an OpenAI-compatible HTTP client, a scripted
//! deterministic mock, and a trainable slot-factored toy policy with
//! closed-form gradients.

mod http;
mod scripted;
pub mod toy;

pub use http::{HttpBackend, HttpConfig, RetryConfig};
pub use scripted::ScriptedBackend;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A generated token with its log-probability under the sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// One completion: the generated text, optional per-token log-probabilities
/// (absent when the server does not return them), and the token count.
///
/// When `token_logprobs` is present its length equals `token_count` and every
/// log-probability is `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub token_count: usize,
}

/// Sampling controls. Temperature 0 means argmax (lowest index wins ties for
/// backends that expose explicit vocabularies).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            seed: 0,
            max_tokens: 1024,
        }
    }
}

impl SamplingConfig {
    pub fn with_seed(seed: u64) -> SamplingConfig {
        SamplingConfig {
            seed,
            ..SamplingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Backend failure classes. Transport problems, timeouts, rate limits, and
/// 5xx responses are retriable; everything else is not.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("credential environment variable {0} not set")]
    MissingCredential(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) | BackendError::RateLimited => {
                true
            }
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A text-generation backend shared across concurrent rollouts.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(
        &self,
        messages: &[Message],
        sampling: &SamplingConfig,
    ) -> Result<CompletionResult, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retriable_classes() {
        assert!(BackendError::Transport("reset".into()).is_retriable());
        assert!(BackendError::Timeout(Duration::from_secs(1)).is_retriable());
        assert!(BackendError::RateLimited.is_retriable());
        assert!(BackendError::Status {
            status: 503,
            body: String::new()
        }
        .is_retriable());
        assert!(!BackendError::Status {
            status: 400,
            body: String::new()
        }
        .is_retriable());
        assert!(!BackendError::MalformedBody("x".into()).is_retriable());
        assert!(!BackendError::InvalidRequest("x".into()).is_retriable());
    }

    #[test]
    fn sampling_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        let bad = SamplingConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
