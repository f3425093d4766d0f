//! Deterministic scripted backend for tests and offline rollout runs.
//!
//! Responses are looked up by fingerprint — the exact content of the last
//! message in the conversation. Unknown fingerprints fall back to a
//! configured default response.

use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::Deserialize;

use super::{
    BackendError, CompletionBackend, CompletionResult, Message, SamplingConfig, TokenLogprob,
};

/// Log-probability assigned uniformly to every synthetic token.
const SYNTHETIC_TOKEN_LOGPROB: f64 = -std::f64::consts::LN_2;

/// Script table mapping message fingerprints to canned responses.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, String>,
    default_response: Option<String>,
}

/// On-disk script file: `{"entries": {fingerprint: response}, "default": …}`.
#[derive(Debug, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    entries: HashMap<String, String>,
    #[serde(default)]
    default: Option<String>,
}

impl ScriptedBackend {
    pub fn new() -> ScriptedBackend {
        ScriptedBackend::default()
    }

    /// Register a canned response for a fingerprint (the last message's
    /// exact content).
    pub fn on(mut self, fingerprint: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.insert(fingerprint.into(), response.into());
        self
    }

    /// Response returned when no fingerprint matches.
    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn load(path: &Path) -> Result<ScriptedBackend, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("script file {path:?}: {e}")))?;
        let file: ScriptFile = serde_json::from_str(&raw)
            .map_err(|e| BackendError::MalformedBody(format!("script file {path:?}: {e}")))?;
        Ok(ScriptedBackend {
            entries: file.entries,
            default_response: file.default,
        })
    }

    fn respond(&self, messages: &[Message]) -> Result<CompletionResult, BackendError> {
        let fingerprint = messages
            .last()
            .map(|m| m.content.as_str())
            .ok_or_else(|| BackendError::InvalidRequest("empty message list".into()))?;
        let text = self
            .entries
            .get(fingerprint)
            .or(self.default_response.as_ref())
            .cloned()
            .unwrap_or_default();
        let token_logprobs: Vec<TokenLogprob> = text
            .split_whitespace()
            .map(|t| TokenLogprob {
                token: t.to_string(),
                logprob: SYNTHETIC_TOKEN_LOGPROB,
            })
            .collect();
        Ok(CompletionResult {
            token_count: token_logprobs.len(),
            token_logprobs: Some(token_logprobs),
            text,
        })
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    async fn complete(
        &self,
        messages: &[Message],
        sampling: &SamplingConfig,
    ) -> Result<CompletionResult, BackendError> {
        sampling.validate()?;
        self.respond(messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(last: &str) -> Vec<Message> {
        vec![Message::system("s"), Message::user(last)]
    }

    #[tokio::test]
    async fn known_fingerprint_returns_canned_text() {
        let backend = ScriptedBackend::new().on("ping", "pong pong");
        let out = backend
            .complete(&msgs("ping"), &SamplingConfig::default())
            .await
            .unwrap();
        assert_eq!(out.text, "pong pong");
        assert_eq!(out.token_count, 2);
        let lps = out.token_logprobs.unwrap();
        assert!(lps.iter().all(|t| t.logprob == SYNTHETIC_TOKEN_LOGPROB));
    }

    #[tokio::test]
    async fn unknown_fingerprint_falls_back_to_default() {
        let backend = ScriptedBackend::new().with_default("<think>t</think>\n<intent>u</intent>");
        let out = backend
            .complete(&msgs("???"), &SamplingConfig::default())
            .await
            .unwrap();
        assert_eq!(out.text, "<think>t</think>\n<intent>u</intent>");
    }

    #[tokio::test]
    async fn deterministic() {
        let backend = ScriptedBackend::new().on("q", "a b c");
        let sampling = SamplingConfig::default();
        let a = backend.complete(&msgs("q"), &sampling).await.unwrap();
        let b = backend.complete(&msgs("q"), &sampling).await.unwrap();
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn loads_script_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(
            &path,
            r#"{"entries": {"hello": "world"}, "default": "fallback"}"#,
        )
        .unwrap();
        let backend = ScriptedBackend::load(&path).unwrap();
        let sampling = SamplingConfig::default();
        assert_eq!(
            backend
                .complete(&msgs("hello"), &sampling)
                .await
                .unwrap()
                .text,
            "world"
        );
        assert_eq!(
            backend
                .complete(&msgs("nope"), &sampling)
                .await
                .unwrap()
                .text,
            "fallback"
        );
    }
}
