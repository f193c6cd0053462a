//! Scripted responses for the mock server.
//!
//! A scenario is an ordered rule list; the first rule whose model, endpoint
//! and matcher all accept a request answers it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::FinishReason;
use crate::types::TokenUsage;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Chat,
    Completions,
    Score,
}

/// All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    /// Exact prompt digest as computed by [`crate::digest::prompt_digest`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    /// Substrings of the prompt text (system and user text, or the score question).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Exact answer text of a scoring request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Hold the request open until the client gives up.
    Timeout,
    /// Reply with `status`.
    Status,
}

fn default_status() -> u16 {
    429
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureMode {
    pub kind: FailureKind,
    #[serde(default = "default_status")]
    pub status: u16,
    /// Fail only the first `times` matches; forever when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Wire model id; `*` matches any model.
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<Endpoint>,
    #[serde(default, rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_mode: Option<FailureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
}

impl Rule {
    pub fn new(model: impl Into<String>, endpoint: Endpoint) -> Self {
        Rule {
            model: model.into(),
            endpoint: Some(endpoint),
            matcher: Matcher::default(),
            response_text: String::new(),
            token_logprobs: None,
            usage: TokenUsage::default(),
            latency_ms: 0,
            failure_mode: None,
            finish_reason: None,
        }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.matcher.contains.push(needle.into());
        self
    }

    pub fn answer(mut self, answer: impl Into<String>) -> Self {
        self.matcher.answer = Some(answer.into());
        self
    }

    pub fn digest(mut self, digest: impl Into<String>) -> Self {
        self.matcher.digest = Some(digest.into());
        self
    }

    pub fn respond(mut self, text: impl Into<String>, usage: TokenUsage) -> Self {
        self.response_text = text.into();
        self.usage = usage;
        self
    }

    pub fn logprobs(mut self, lp: Vec<f64>) -> Self {
        self.token_logprobs = Some(lp);
        self
    }

    pub fn fail(mut self, kind: FailureKind, status: u16, times: Option<u32>) -> Self {
        self.failure_mode = Some(FailureMode { kind, status, times });
        self
    }

    /// What the mock sees of one request.
    pub fn accepts(&self, req: &RequestView<'_>) -> bool {
        if self.model != "*" && self.model != req.model {
            return false;
        }
        if self.endpoint.is_some_and(|e| e != req.endpoint) {
            return false;
        }
        let m = &self.matcher;
        if m.digest.as_deref().is_some_and(|d| d != req.digest) {
            return false;
        }
        if !m.contains.iter().all(|needle| req.text.contains(needle.as_str())) {
            return false;
        }
        match (&m.answer, req.answer) {
            (Some(want), Some(got)) => want == got,
            (Some(_), None) => false,
            (None, _) => true,
        }
    }
}

/// Request fields rules can match on.
#[derive(Debug, Clone, Copy)]
pub struct RequestView<'a> {
    pub endpoint: Endpoint,
    pub model: &'a str,
    pub digest: &'a str,
    pub text: &'a str,
    pub answer: Option<&'a str>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "scenario_version")]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub rules: Vec<Rule>,
}

fn scenario_version() -> u32 {
    SCENARIO_VERSION
}

impl Scenario {
    pub fn new(rules: Vec<Rule>) -> Self {
        Scenario {
            version: SCENARIO_VERSION,
            description: None,
            rules,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (index, rule) in self.rules.iter().enumerate() {
            let bad = |reason: &str| {
                Err(ScenarioError::InvalidRule {
                    index,
                    reason: reason.to_owned(),
                })
            };
            if rule.model.is_empty() {
                return bad("empty model");
            }
            if let Some(lp) = &rule.token_logprobs {
                if lp.is_empty() || lp.iter().any(|v| !v.is_finite() || *v > 0.0) {
                    return bad("token_logprobs must be non-empty, finite and <= 0");
                }
            }
            if let Some(f) = &rule.failure_mode {
                if f.kind == FailureKind::Status && !(400..=599).contains(&f.status) {
                    return bad("failure status must be 4xx or 5xx");
                }
            }
        }
        Ok(())
    }

    /// Index of the first rule accepting the request.
    pub fn find(&self, req: &RequestView<'_>) -> Option<usize> {
        self.rules.iter().position(|r| r.accepts(req))
    }
}
