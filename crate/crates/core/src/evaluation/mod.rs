//! Run-level scoring, recovery analysis and cost reporting.

pub mod metrics;
pub mod report;

pub use metrics::{anls, letter_match, levenshtein, relaxed_accuracy, similarity, Scorer};
pub use report::{
    recovery_analysis, report_costs, score_run, Bucket, ComparisonRows, CostReport, EvalError, MetricsReport,
    ModelCost, RecoveryReport, RecoveryRow, SampleRecovery, SampleScore,
};
