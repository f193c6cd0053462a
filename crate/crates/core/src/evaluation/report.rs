use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{estimate_cost, round_usd, Pricing};
use crate::pipeline::{RunConfig, SampleOutcome};
use crate::types::{BenchmarkKind, MetricKind, TokenUsage};

use super::metrics::Scorer;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no outcomes to score")]
    EmptyRun,
    #[error("sample {id} belongs to {found}, expected {expected}")]
    MixedBenchmarks {
        id: String,
        found: BenchmarkKind,
        expected: BenchmarkKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub score: f64,
}

/// Each row is a mean score x 100 over the same outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRows {
    pub verdict: f64,
    pub majority_vote_experts: f64,
    pub majority_vote_pool: f64,
    pub best_single_expert: f64,
    pub best_single_expert_index: Option<usize>,
    /// Score of each pool member's first-round answers.
    pub per_model: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub benchmark: BenchmarkKind,
    pub metric: MetricKind,
    pub n_samples: usize,
    pub n_failed: usize,
    pub primary_metric: f64,
    pub per_sample: Vec<SampleScore>,
    pub comparison: ComparisonRows,
}

fn mean_pct(scores: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        scores.sum::<f64>() / n as f64 * 100.0
    }
}

fn sorted_by_id(outcomes: &[SampleOutcome]) -> Vec<&SampleOutcome> {
    let mut v: Vec<&SampleOutcome> = outcomes.iter().collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    v
}

/// Score verdict answers plus the majority-vote and single-model baselines.
/// Failed samples count as 0.
pub fn score_run(
    outcomes: &[SampleOutcome],
    benchmark: BenchmarkKind,
    scorer: &Scorer,
) -> Result<MetricsReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    if let Some(o) = outcomes.iter().find(|o| o.benchmark != benchmark) {
        return Err(EvalError::MixedBenchmarks {
            id: o.sample_id.clone(),
            found: o.benchmark,
            expected: benchmark,
        });
    }
    let ordered = sorted_by_id(outcomes);
    let n = ordered.len();
    let score = |pred: Option<&str>, o: &SampleOutcome| scorer.score(pred, &o.gold_answers);

    let per_sample: Vec<SampleScore> = ordered
        .iter()
        .map(|o| SampleScore {
            id: o.sample_id.clone(),
            score: score(o.verdict.as_ref().and_then(|v| v.extracted.as_deref()), o),
        })
        .collect();
    let primary = mean_pct(per_sample.iter().map(|s| s.score), n);

    let majority_experts = mean_pct(ordered.iter().map(|o| score(o.majority_answer.as_deref(), o)), n);
    let majority_pool = mean_pct(ordered.iter().map(|o| score(o.pool_majority().as_deref(), o)), n);

    let k = ordered.iter().map(|o| o.candidates.len()).max().unwrap_or(0);
    let per_model: Vec<f64> = (0..k)
        .map(|i| {
            mean_pct(
                ordered.iter().map(|o| {
                    let pred = o.candidates.get(i).and_then(|c| c.extracted.as_deref());
                    score(pred, o)
                }),
                n,
            )
        })
        .collect();
    let best = per_model
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        });

    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        benchmark,
        metric: scorer.metric,
        n_samples: n,
        n_failed: ordered.iter().filter(|o| o.is_failed()).count(),
        primary_metric: primary,
        per_sample,
        comparison: ComparisonRows {
            verdict: primary,
            majority_vote_experts: majority_experts,
            majority_vote_pool: majority_pool,
            best_single_expert: best.map_or(0.0, |b| b.1),
            best_single_expert_index: best.map(|b| b.0),
            per_model,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    MajorityCorrect,
    MinorityCorrect,
    ZeroCorrect,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::MajorityCorrect, Bucket::MinorityCorrect, Bucket::ZeroCorrect];

    /// More than half correct is a majority; at least one is a minority.
    pub fn assign(correct: usize, experts: usize) -> Bucket {
        if correct == 0 {
            Bucket::ZeroCorrect
        } else if 2 * correct > experts {
            Bucket::MajorityCorrect
        } else {
            Bucket::MinorityCorrect
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::MajorityCorrect => "majority-correct",
            Bucket::MinorityCorrect => "minority-correct",
            Bucket::ZeroCorrect => "zero-correct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecovery {
    pub id: String,
    pub experts: usize,
    pub correct_experts: usize,
    pub bucket: Bucket,
    pub verdict_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_alone_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    /// `None` when the run was not conditioned on the bare verdict.
    pub verdict_alone_correct: Option<bool>,
    pub bucket: Bucket,
    pub count: usize,
    /// Samples in the bucket the full protocol answered correctly.
    pub recovered: usize,
    /// `recovered / count`; absent for empty buckets.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub conditioned: bool,
    pub rows: Vec<RecoveryRow>,
    pub samples: Vec<SampleRecovery>,
}

impl RecoveryReport {
    pub fn row(&self, verdict_alone_correct: Option<bool>, bucket: Bucket) -> Option<&RecoveryRow> {
        self.rows
            .iter()
            .find(|r| r.verdict_alone_correct == verdict_alone_correct && r.bucket == bucket)
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecovery> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Bucket samples by how many selected experts answered correctly and
/// report how often the verdict got it right in each bucket.
///
/// With `verdict_alone` the grid is split by whether the verdict model alone
/// was correct. Samples absent from the map land in `None` rows.
pub fn recovery_analysis(
    outcomes: &[SampleOutcome],
    scorer: &Scorer,
    verdict_alone: Option<&BTreeMap<String, bool>>,
) -> RecoveryReport {
    let samples: Vec<SampleRecovery> = sorted_by_id(outcomes)
        .into_iter()
        .map(|o| {
            let experts: Vec<_> = o.paths.iter().filter(|p| p.is_ok()).collect();
            let correct = experts
                .iter()
                .filter(|p| scorer.is_correct(p.extracted.as_deref(), &o.gold_answers))
                .count();
            SampleRecovery {
                id: o.sample_id.clone(),
                experts: experts.len(),
                correct_experts: correct,
                bucket: Bucket::assign(correct, experts.len()),
                verdict_correct: scorer
                    .is_correct(o.verdict.as_ref().and_then(|v| v.extracted.as_deref()), &o.gold_answers),
                verdict_alone_correct: verdict_alone.and_then(|m| m.get(&o.sample_id).copied()),
            }
        })
        .collect();

    let conditions: Vec<Option<bool>> = match verdict_alone {
        None => vec![None],
        Some(_) => {
            let mut c = vec![Some(true), Some(false)];
            if samples.iter().any(|s| s.verdict_alone_correct.is_none()) {
                c.push(None);
            }
            c
        }
    };
    let rows = conditions
        .into_iter()
        .flat_map(|cond| Bucket::ALL.into_iter().map(move |b| (cond, b)))
        .map(|(cond, bucket)| {
            let members: Vec<&SampleRecovery> = samples
                .iter()
                .filter(|s| s.bucket == bucket && s.verdict_alone_correct == cond)
                .collect();
            let count = members.len();
            let recovered = members.iter().filter(|s| s.verdict_correct).count();
            RecoveryRow {
                verdict_alone_correct: cond,
                bucket,
                count,
                recovered,
                rate: (count > 0).then(|| recovered as f64 / count as f64),
            }
        })
        .collect();

    RecoveryReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_samples: samples.len(),
        conditioned: verdict_alone.is_some(),
        rows,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub usage: TokenUsage,
    pub usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub schema_version: u32,
    pub per_model: BTreeMap<String, ModelCost>,
    pub total_usd: f64,
    pub verdict_samples: usize,
    pub mean_verdict_usd: f64,
}

/// Dollar totals per model over the usage ledger, plus the mean verdict cost
/// per sample that reached the verdict.
pub fn report_costs(outcomes: &[SampleOutcome], config: &RunConfig) -> CostReport {
    let pricing = |name: &str| -> Pricing {
        if name == config.verdict.name {
            return config.verdict.pricing;
        }
        config
            .pool
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.pricing)
            .unwrap_or_default()
    };

    let mut usage: BTreeMap<String, TokenUsage> = BTreeMap::new();
    for o in outcomes {
        for (model, u) in &o.usage_by_model {
            *usage.entry(model.clone()).or_default() += *u;
        }
    }
    let per_model: BTreeMap<String, ModelCost> = usage
        .into_iter()
        .map(|(model, u)| {
            let usd = estimate_cost(u, pricing(&model));
            (model, ModelCost { usage: u, usd })
        })
        .collect();
    let total: f64 = per_model.values().map(|c| c.usd).sum();

    let verdict_costs: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.verdict.as_ref())
        .map(|v| estimate_cost(v.usage, config.verdict.pricing))
        .collect();
    let mean = if verdict_costs.is_empty() {
        0.0
    } else {
        verdict_costs.iter().sum::<f64>() / verdict_costs.len() as f64
    };

    CostReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_model: per_model
            .into_iter()
            .map(|(k, c)| {
                (
                    k,
                    ModelCost {
                        usd: round_usd(c.usd),
                        ..c
                    },
                )
            })
            .collect(),
        total_usd: round_usd(total),
        verdict_samples: verdict_costs.len(),
        mean_verdict_usd: round_usd(mean),
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let fmt_row = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_owned()
    };
    let mut out = String::new();
    writeln!(out, "{}", fmt_row(headers.to_vec())).unwrap();
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    writeln!(out, "{}", rule.join("  ")).unwrap();
    for row in rows {
        writeln!(out, "{}", fmt_row(row.iter().map(String::as_str).collect())).unwrap();
    }
    out
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let c = &self.comparison;
        let mut rows = vec![
            vec!["verdict".to_owned(), format!("{:.1}", c.verdict)],
            vec![
                "majority vote (experts)".to_owned(),
                format!("{:.1}", c.majority_vote_experts),
            ],
            vec![
                "majority vote (pool)".to_owned(),
                format!("{:.1}", c.majority_vote_pool),
            ],
        ];
        if let Some(i) = c.best_single_expert_index {
            rows.push(vec![
                format!("best single model (#{i})"),
                format!("{:.1}", c.best_single_expert),
            ]);
        }
        format!(
            "{} {} over {} samples ({} failed)\n{}",
            self.benchmark,
            self.metric,
            self.n_samples,
            self.n_failed,
            render_table(&["method", "score"], &rows)
        )
    }
}

impl RecoveryReport {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    match r.verdict_alone_correct {
                        Some(true) => "verdict alone correct",
                        Some(false) => "verdict alone wrong",
                        None => "all",
                    }
                    .to_owned(),
                    r.bucket.label().to_owned(),
                    r.count.to_string(),
                    r.recovered.to_string(),
                    r.rate.map_or("-".to_owned(), |v| format!("{:.2}", v * 100.0)),
                ]
            })
            .collect();
        render_table(&["condition", "bucket", "n", "correct", "rate %"], &rows)
    }
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_model
            .iter()
            .map(|(m, c)| {
                vec![
                    m.clone(),
                    c.usage.prompt_tokens.to_string(),
                    c.usage.completion_tokens.to_string(),
                    format!("{:.6}", c.usd),
                ]
            })
            .collect();
        rows.push(vec![
            "total".into(),
            String::new(),
            String::new(),
            format!("{:.6}", self.total_usd),
        ]);
        format!(
            "{}mean verdict cost per sample: ${:.6} over {} samples\n",
            render_table(&["model", "prompt tok", "completion tok", "usd"], &rows),
            self.mean_verdict_usd,
            self.verdict_samples
        )
    }
}
