//! Sweeps over the expert count and the selection strategy.
//!
//! Every variant runs in its own sub-directory but shares one request cache,
//! so first-round answers and scores are fetched once for the whole sweep.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::SelectionStrategy;
use crate::evaluation::report::render_table;
use crate::pipeline::RunConfig;

use super::batch::{run_batch, BatchError, BatchOptions};
use super::manifest::Manifest;
use super::store::RunStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `m` for the expert-count sweep, `strategy` for the strategy sweep.
    pub sweep: String,
    pub m: usize,
    pub strategy: SelectionStrategy,
    pub metric: f64,
    pub majority_vote_experts: f64,
    pub n_failed: usize,
    pub mean_verdict_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn rows_for<'a>(&'a self, sweep: &'a str) -> impl Iterator<Item = &'a AblationRow> + 'a {
        self.rows.iter().filter(move |r| r.sweep == sweep)
    }

    pub fn strategy_metric(&self, strategy: SelectionStrategy) -> Option<f64> {
        self.rows_for("strategy")
            .find(|r| r.strategy == strategy)
            .map(|r| r.metric)
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.sweep.clone(),
                    r.m.to_string(),
                    r.strategy.as_str().to_owned(),
                    format!("{:.1}", r.metric),
                    format!("{:.1}", r.majority_vote_experts),
                    r.n_failed.to_string(),
                ]
            })
            .collect();
        render_table(&["sweep", "m", "strategy", "verdict", "majority (m)", "failed"], &rows)
    }
}

pub struct AblationPlan {
    pub ms: Vec<usize>,
    pub strategies: Vec<SelectionStrategy>,
    /// Expert count used in the strategy sweep.
    pub strategy_m: usize,
}

impl AblationPlan {
    /// `m = 1..=min(5, k)` with cross-all, then every strategy at the configured `m`.
    pub fn standard(config: &RunConfig) -> Self {
        AblationPlan {
            ms: (1..=config.k().min(5)).collect(),
            strategies: SelectionStrategy::ALL.to_vec(),
            strategy_m: config.m,
        }
    }
}

pub async fn run_ablation(
    manifest: &Manifest,
    base: &RunConfig,
    plan: &AblationPlan,
    out_dir: &Path,
) -> Result<AblationReport, BatchError> {
    let shared = Arc::new(RunStore::open(&out_dir.join("shared-cache"), true)?);
    let mut variants: Vec<(String, RunConfig)> = Vec::new();
    for &m in &plan.ms {
        let mut c = base.clone();
        c.m = m;
        c.strategy = SelectionStrategy::CrossAll;
        variants.push(("m".into(), c));
    }
    for &strategy in &plan.strategies {
        let mut c = base.clone();
        c.m = plan.strategy_m;
        c.strategy = strategy;
        if strategy == SelectionStrategy::BestReference && c.reference.is_none() {
            c.reference = Some(0);
        }
        variants.push(("strategy".into(), c));
    }

    let mut rows = Vec::new();
    for (sweep, config) in variants {
        let dir = out_dir.join(format!("{sweep}-{}-m{}", config.strategy.as_str(), config.m));
        let store = Arc::new(RunStore::open(&dir, false)?);
        let options = BatchOptions {
            cache: Some(shared.clone()),
            ..Default::default()
        };
        let run = run_batch(manifest, Arc::new(config.clone()), store, options).await?;
        let summary = run.summary.expect("ablation runs are never stopped early");
        rows.push(AblationRow {
            sweep,
            m: config.m,
            strategy: config.strategy,
            metric: summary.metrics.primary_metric,
            majority_vote_experts: summary.metrics.comparison.majority_vote_experts,
            n_failed: summary.metrics.n_failed,
            mean_verdict_usd: summary.cost.mean_verdict_usd,
        });
    }
    shared.compact(&[])?;

    let report = AblationReport {
        schema_version: 1,
        rows,
    };
    let root = RunStore::open(out_dir, true)?;
    root.write_json("ablation.json", &report)?;
    root.write_text("ablation.txt", &report.to_text())?;
    Ok(report)
}
