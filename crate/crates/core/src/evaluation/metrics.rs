//! Per-answer benchmark metrics.

use serde::{Deserialize, Serialize};

use crate::answer::{extract_answer, normalize_answer};
use crate::types::{AnswerFormat, MetricKind};

/// Unit-cost insert/delete/substitute distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein similarity of two already-normalized strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Best similarity over the gold answers, zeroed below `threshold` (ties kept).
pub fn anls(pred: &str, golds: &[String], threshold: f64) -> f64 {
    let pred = normalize_answer(pred);
    golds
        .iter()
        .map(|g| similarity(&pred, &normalize_answer(g)))
        .map(|sim| if sim >= threshold { sim } else { 0.0 })
        .fold(0.0, f64::max)
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = normalize_answer(s)
        .chars()
        .filter(|c| !matches!(c, '%' | ',' | '$' | '\u{20ac}' | '\u{a3}' | '\u{a5}') && !c.is_whitespace())
        .collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Numbers within `rel_tol` of the gold (exact when the gold is zero);
/// anything else by normalized string equality.
pub fn relaxed_accuracy(pred: &str, gold: &str, rel_tol: f64) -> bool {
    match (parse_number(pred), parse_number(gold)) {
        (Some(p), Some(0.0)) => p == 0.0,
        (Some(p), Some(g)) => (p - g).abs() <= rel_tol * g.abs(),
        _ => normalize_answer(pred) == normalize_answer(gold),
    }
}

fn option_letter(s: &str) -> Option<String> {
    extract_answer(&s.to_uppercase(), AnswerFormat::Letter)
}

/// Case-insensitive equality of the option letters, wrappers like `(C)` stripped.
pub fn letter_match(pred: &str, gold: &str) -> bool {
    match (option_letter(pred), option_letter(gold)) {
        (Some(p), Some(g)) => p == g,
        _ => false,
    }
}

/// A benchmark metric with its tunables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub metric: MetricKind,
    pub anls_threshold: f64,
    pub relative_tolerance: f64,
}

impl Scorer {
    pub fn new(metric: MetricKind) -> Self {
        Self {
            metric,
            anls_threshold: 0.5,
            relative_tolerance: 0.05,
        }
    }

    /// Score in `[0, 1]`; a missing prediction scores 0.
    pub fn score(&self, pred: Option<&str>, golds: &[String]) -> f64 {
        let Some(pred) = pred else { return 0.0 };
        let hit = |f: &dyn Fn(&str) -> bool| if golds.iter().any(|g| f(g)) { 1.0 } else { 0.0 };
        match self.metric {
            MetricKind::Anls => anls(pred, golds, self.anls_threshold),
            MetricKind::RelaxedAccuracy => hit(&|g| relaxed_accuracy(pred, g, self.relative_tolerance)),
            MetricKind::ExactMatch => hit(&|g| normalize_answer(pred) == normalize_answer(g)),
            MetricKind::LetterMatch => hit(&|g| letter_match(pred, g)),
        }
    }

    /// ANLS counts as correct at or above the threshold; the others need a full match.
    pub fn is_correct(&self, pred: Option<&str>, golds: &[String]) -> bool {
        let s = self.score(pred, golds);
        match self.metric {
            MetricKind::Anls => pred.is_some() && s >= self.anls_threshold && s > 0.0,
            _ => s >= 1.0,
        }
    }
}
