//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Scoring rule applied to a benchmark's answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Average normalized Levenshtein similarity, thresholded.
    Anls,
    /// Numeric answers within a relative tolerance, strings by exact match.
    RelaxedAccuracy,
    /// Normalized string equality.
    ExactMatch,
    /// Multiple-choice option letter.
    LetterMatch,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Anls => "ANLS",
            MetricKind::RelaxedAccuracy => "Acc (relaxed)",
            MetricKind::ExactMatch => "Acc (exact)",
            MetricKind::LetterMatch => "Acc (letter)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    InfographicVqa,
    ChartMuseum,
    ChartQaPro,
    HrBench,
    Custom(MetricKind),
}

impl BenchmarkKind {
    pub fn metric(self) -> MetricKind {
        match self {
            BenchmarkKind::InfographicVqa => MetricKind::Anls,
            BenchmarkKind::ChartMuseum | BenchmarkKind::ChartQaPro => MetricKind::RelaxedAccuracy,
            BenchmarkKind::HrBench => MetricKind::LetterMatch,
            BenchmarkKind::Custom(metric) => metric,
        }
    }

    /// Marker the chain-of-thought template asks the model to use.
    pub fn reasoning_format(self) -> AnswerFormat {
        match self {
            BenchmarkKind::ChartMuseum | BenchmarkKind::ChartQaPro => AnswerFormat::Tagged,
            _ => AnswerFormat::Boxed,
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchmarkKind::InfographicVqa => f.write_str("InfographicVQA"),
            BenchmarkKind::ChartMuseum => f.write_str("ChartMuseum"),
            BenchmarkKind::ChartQaPro => f.write_str("ChartQAPro"),
            BenchmarkKind::HrBench => f.write_str("HR-Bench"),
            BenchmarkKind::Custom(metric) => write!(f, "Custom({metric})"),
        }
    }
}

/// How a final answer is marked inside free-form model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// `\boxed{...}`
    Boxed,
    /// `<answer>...</answer>`
    Tagged,
    /// A standalone option letter such as `A`, `(A)` or `A.`
    Letter,
}

/// Image input: a local file or a URL passed through verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn is_url(&self) -> bool {
        let s = self.0.as_str();
        s.starts_with("http://") || s.starts_with("https://") || s.starts_with("data:")
    }

    pub fn path(&self) -> Option<&Path> {
        (!self.is_url()).then(|| Path::new(&self.0))
    }

    /// Resolve a relative file reference against `base`.
    pub fn resolved(&self, base: &Path) -> ImageRef {
        match self.path() {
            Some(p) if p.is_relative() => ImageRef(base.join(p).to_string_lossy().into_owned()),
            _ => self.clone(),
        }
    }
}

impl From<PathBuf> for ImageRef {
    fn from(p: PathBuf) -> Self {
        ImageRef(p.to_string_lossy().into_owned())
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        ImageRef(s.to_owned())
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub image: ImageRef,
    /// Layout-annotated render of the image, fed to the verdict when enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_image: Option<ImageRef>,
    pub gold_answers: Vec<String>,
    pub benchmark: BenchmarkKind,
    /// Per-type template key (ChartQAPro).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub const fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

/// A pool member's short answer from the first draft round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub model_index: usize,
    pub raw_text: String,
    pub extracted: Option<String>,
    pub valid: bool,
}

impl CandidateAnswer {
    pub fn new(model_index: usize, raw_text: String, extracted: Option<String>) -> Self {
        let extracted = extracted.filter(|s| !s.is_empty());
        Self {
            model_index,
            raw_text,
            valid: extracted.is_some(),
            extracted,
        }
    }

    pub fn invalid(model_index: usize) -> Self {
        Self::new(model_index, String::new(), None)
    }
}

/// A selected expert's chain-of-thought and its extracted final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub expert_index: usize,
    pub cot_text: String,
    pub extracted: Option<String>,
    pub usage: TokenUsage,
    /// Set when the generation failed; such paths never reach the verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReasoningPath {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && !self.cot_text.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_metric_mapping() {
        assert_eq!(BenchmarkKind::InfographicVqa.metric(), MetricKind::Anls);
        assert_eq!(BenchmarkKind::ChartMuseum.metric(), MetricKind::RelaxedAccuracy);
        assert_eq!(BenchmarkKind::HrBench.metric(), MetricKind::LetterMatch);
        assert_eq!(
            BenchmarkKind::Custom(MetricKind::ExactMatch).metric(),
            MetricKind::ExactMatch
        );
    }

    #[test]
    fn benchmark_serde_names() {
        let s = serde_json::to_string(&BenchmarkKind::ChartQaPro).unwrap();
        assert_eq!(s, "\"chart_qa_pro\"");
        let custom: BenchmarkKind = serde_json::from_str(r#"{"custom":"anls"}"#).unwrap();
        assert_eq!(custom, BenchmarkKind::Custom(MetricKind::Anls));
    }

    #[test]
    fn empty_extraction_is_invalid() {
        let c = CandidateAnswer::new(2, "x".into(), Some(String::new()));
        assert!(!c.valid);
        assert!(c.extracted.is_none());
    }

    #[test]
    fn image_ref_resolution() {
        let base = Path::new("/data/set");
        assert_eq!(ImageRef::from("a.png").resolved(base).0, "/data/set/a.png");
        assert_eq!(ImageRef::from("/abs.png").resolved(base).0, "/abs.png");
        assert_eq!(ImageRef::from("https://x/y.png").resolved(base).0, "https://x/y.png");
    }
}
