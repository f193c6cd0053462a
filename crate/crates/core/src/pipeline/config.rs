use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ModelSpec, ScoringBackend};
use crate::consensus::SelectionStrategy;
use crate::types::{AnswerFormat, BenchmarkKind, MetricKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictInput {
    #[default]
    ReasoningPaths,
    AnswersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictVisual {
    #[default]
    ImagePlusAux,
    ImageOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxTokens {
    pub answer: u32,
    pub reasoning: u32,
    pub verdict: u32,
}

impl Default for MaxTokens {
    fn default() -> Self {
        Self {
            answer: 64,
            reasoning: 2048,
            verdict: 512,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_m() -> usize {
    3
}
fn default_concurrency() -> usize {
    8
}
fn default_threshold() -> f64 {
    0.5
}
fn default_tolerance() -> f64 {
    0.05
}
fn default_backoff_ms() -> u64 {
    250
}

/// Everything one run needs besides the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Used when the manifest has no benchmark header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkKind>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub strategy: SelectionStrategy,
    /// Reference pool index for best-reference selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    #[serde(default)]
    pub verdict_input: VerdictInput,
    #[serde(default)]
    pub verdict_visual: VerdictVisual,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: MaxTokens,
    /// Overrides the benchmark's reasoning answer marker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_format: Option<AnswerFormat>,
    /// Overrides the benchmark's metric (e.g. strict instead of relaxed accuracy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    #[serde(default = "default_threshold")]
    pub anls_threshold: f64,
    #[serde(default = "default_tolerance")]
    pub relative_tolerance: f64,
    /// Reuse first-round outputs as reasoning paths; the first round then
    /// uses the chain-of-thought template.
    #[serde(default)]
    pub economy_mode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_image_side: Option<u32>,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// ChartQAPro per-question-type templates; `{QUESTION}` is substituted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub question_type_prompts: BTreeMap<String, String>,
    pub verdict: ModelSpec,
    pub pool: Vec<ModelSpec>,
}

static ENV_VAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").unwrap());

/// Replace `${VAR}` and `${VAR:-default}` with environment values.
pub fn interpolate_env(text: &str) -> Result<String, ConfigError> {
    let mut missing = None;
    let out = ENV_VAR.replace_all(text, |caps: &Captures| match (std::env::var(&caps[1]), caps.get(2)) {
        (Ok(v), _) => v,
        (Err(_), Some(default)) => default.as_str().to_owned(),
        (Err(_), None) => {
            missing.get_or_insert_with(|| caps[1].to_owned());
            String::new()
        }
    });
    match missing {
        Some(var) => Err(ConfigError::MissingEnv(var)),
        None => Ok(out.into_owned()),
    }
}

impl RunConfig {
    pub fn new(pool: Vec<ModelSpec>, verdict: ModelSpec) -> Self {
        RunConfig {
            benchmark: None,
            m: default_m().min(pool.len().max(1)),
            strategy: SelectionStrategy::default(),
            reference: None,
            verdict_input: VerdictInput::default(),
            verdict_visual: VerdictVisual::default(),
            max_concurrency: default_concurrency(),
            temperature: 0.0,
            max_tokens: MaxTokens::default(),
            answer_format: None,
            metric: None,
            anls_threshold: default_threshold(),
            relative_tolerance: default_tolerance(),
            economy_mode: false,
            max_image_side: None,
            retry_backoff_ms: default_backoff_ms(),
            question_type_prompts: BTreeMap::new(),
            verdict,
            pool,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(&interpolate_env(text)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn k(&self) -> usize {
        self.pool.len()
    }

    pub fn metric_for(&self, benchmark: BenchmarkKind) -> MetricKind {
        self.metric.unwrap_or(benchmark.metric())
    }

    pub fn reasoning_format_for(&self, benchmark: BenchmarkKind) -> AnswerFormat {
        self.answer_format.unwrap_or(benchmark.reasoning_format())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        let k = self.pool.len();
        if k == 0 {
            return invalid("pool is empty".into());
        }
        if self.m == 0 || self.m > k {
            return invalid(format!("m must be in 1..={k}, got {}", self.m));
        }
        let mut names = HashSet::new();
        for spec in &self.pool {
            if !names.insert(spec.name.as_str()) {
                return invalid(format!("duplicate pool model name {}", spec.name));
            }
            if k > 1 && spec.supports_scoring == ScoringBackend::None {
                return invalid(format!("pool model {} cannot score answers", spec.name));
            }
        }
        for spec in self.pool.iter().chain(std::iter::once(&self.verdict)) {
            let p = spec.pricing;
            if !(p.input_per_million >= 0.0 && p.output_per_million >= 0.0) {
                return invalid(format!("negative pricing for {}", spec.name));
            }
            if spec.request_timeout.is_nan() || spec.request_timeout <= 0.0 {
                return invalid(format!("request_timeout must be positive for {}", spec.name));
            }
        }
        if self.strategy == SelectionStrategy::BestReference {
            match self.reference {
                None => return invalid("best_reference strategy needs `reference`".into()),
                Some(r) if r >= k => return invalid(format!("reference {r} out of range")),
                _ => {}
            }
        }
        if !(0.0..=1.0).contains(&self.anls_threshold) {
            return invalid("anls_threshold must be within [0, 1]".into());
        }
        if self.relative_tolerance.is_nan() || self.relative_tolerance < 0.0 {
            return invalid("relative_tolerance must be non-negative".into());
        }
        if self.max_concurrency == 0 {
            return invalid("max_concurrency must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
m = 3
strategy = "cross_all"

[verdict]
name = "gpt-4o"
base_url = "${VERDICT_URL_FOR_TEST:-https://api.openai.com}"
api_key_env = "OPENAI_API_KEY"
pricing = { input_per_million = 2.5, output_per_million = 10.0 }

[[pool]]
name = "draft-A"
base_url = "http://localhost:8001"

[[pool]]
name = "draft-B"
base_url = "http://localhost:8002"
supports_scoring = "echo_logprobs"

[[pool]]
name = "draft-C"
base_url = "http://localhost:8003"
"#;

    #[test]
    fn parses_with_defaults_and_env_fallback() {
        let c = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.m, 3);
        assert_eq!(c.verdict.base_url, "https://api.openai.com");
        assert_eq!(c.pool[1].supports_scoring, ScoringBackend::EchoLogprobs);
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.anls_threshold, 0.5);
        assert_eq!(c.verdict_visual, VerdictVisual::ImagePlusAux);
    }

    #[test]
    fn serialize_parse_round_trip() {
        let c = RunConfig::from_toml_str(SAMPLE).unwrap();
        let text = c.to_toml_string();
        let again = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml_string(), text);
    }

    #[test]
    fn rejects_bad_m_and_missing_reference() {
        let too_big = SAMPLE.replace("m = 3", "m = 4");
        assert!(matches!(
            RunConfig::from_toml_str(&too_big),
            Err(ConfigError::Invalid(_))
        ));
        let best_ref = SAMPLE.replace("\"cross_all\"", "\"best_reference\"");
        assert!(matches!(
            RunConfig::from_toml_str(&best_ref),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn missing_env_is_an_error() {
        let text = "x = \"${SURELY_UNSET_VARIABLE_42}\"";
        assert!(matches!(interpolate_env(text), Err(ConfigError::MissingEnv(v)) if v == "SURELY_UNSET_VARIABLE_42"));
    }

    #[test]
    fn programmatic_defaults_match_file_defaults() {
        let pool = vec![ModelSpec::new("a", "http://x"), ModelSpec::new("b", "http://x")];
        let c = RunConfig::new(pool, ModelSpec::new("v", "http://x"));
        assert_eq!(c.m, 2);
        assert_eq!(c.max_concurrency, 8);
        assert!(c.validate().is_ok());
    }
}
