//! Resumable batch execution over a manifest.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::info;

use crate::client::{ClientOptions, ModelClient, ResponseCache};
use crate::evaluation::{
    recovery_analysis, report_costs, score_run, CostReport, EvalError, MetricsReport, RecoveryReport, Scorer,
};
use crate::pipeline::{BareVerdict, Pipeline, RunConfig, SampleOutcome};
use crate::types::{BenchmarkKind, Sample};

use super::manifest::Manifest;
use super::store::{RunStore, StoreError, META_FILE};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Default)]
pub struct BatchOptions {
    /// Stop after this many pending samples, leaving the run resumable.
    pub stop_after: Option<usize>,
    /// Also ask the verdict model alone, to condition the recovery report.
    pub verdict_alone: bool,
    /// Cache shared with other runs; the run store is used otherwise.
    pub cache: Option<Arc<dyn ResponseCache>>,
}

/// Metrics, recovery and cost for one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub metrics: MetricsReport,
    pub recovery: RecoveryReport,
    pub cost: CostReport,
}

impl RunSummary {
    pub fn n_failed(&self) -> usize {
        self.metrics.n_failed
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}\nrecovery by expert correctness\n{}\ncost\n{}",
            self.metrics.to_text(),
            self.recovery.to_text(),
            self.cost.to_text()
        )
    }
}

#[derive(Debug, Clone)]
pub struct BatchRun {
    /// Samples run by this invocation.
    pub processed: usize,
    /// Samples already complete in the store.
    pub skipped: usize,
    /// Requests that reached an endpoint.
    pub network_calls: u64,
    /// `None` when stopped early.
    pub summary: Option<RunSummary>,
}

pub fn scorer_for(config: &RunConfig, benchmark: BenchmarkKind) -> Scorer {
    Scorer {
        metric: config.metric_for(benchmark),
        anls_threshold: config.anls_threshold,
        relative_tolerance: config.relative_tolerance,
    }
}

/// Build the summary of stored outcomes. `bare` conditions the recovery report.
pub fn summarize(
    outcomes: &[SampleOutcome],
    config: &RunConfig,
    benchmark: BenchmarkKind,
    bare: Option<&BTreeMap<String, BareVerdict>>,
) -> Result<RunSummary, EvalError> {
    let scorer = scorer_for(config, benchmark);
    let metrics = score_run(outcomes, benchmark, &scorer)?;
    let alone: Option<BTreeMap<String, bool>> = bare.filter(|b| !b.is_empty()).map(|b| {
        outcomes
            .iter()
            .filter_map(|o| {
                b.get(&o.sample_id).map(|v| {
                    (
                        o.sample_id.clone(),
                        scorer.is_correct(v.answer.as_deref(), &o.gold_answers),
                    )
                })
            })
            .collect()
    });
    Ok(RunSummary {
        schema_version: 1,
        recovery: recovery_analysis(outcomes, &scorer, alone.as_ref()),
        cost: report_costs(outcomes, config),
        metrics,
    })
}

pub fn client_for(config: &RunConfig) -> ModelClient {
    ModelClient::new(ClientOptions {
        max_concurrency: config.max_concurrency,
        backoff: Duration::from_millis(config.retry_backoff_ms),
        max_image_side: config.max_image_side,
    })
}

/// Run every sample not yet complete in `store`, then compact the store and
/// write `summary.json`, `summary.txt` and `meta.json`.
pub async fn run_batch(
    manifest: &Manifest,
    config: Arc<RunConfig>,
    store: Arc<RunStore>,
    options: BatchOptions,
) -> Result<BatchRun, BatchError> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyRun.into());
    }
    let started = Instant::now();
    let started_at = chrono::Utc::now();
    let cache: Arc<dyn ResponseCache> = options.cache.clone().unwrap_or_else(|| store.clone());
    let client = client_for(&config).with_cache(cache);
    let pipeline = Pipeline::new(config.clone(), client.clone());

    let samples = manifest.samples();
    let done = store.completed();
    let pending: Vec<&Sample> = samples.iter().filter(|s| !done.contains(&s.id)).collect();
    let skipped = samples.len() - pending.len();
    let budget = options.stop_after.unwrap_or(usize::MAX);
    let to_run: Vec<&Sample> = pending.iter().copied().take(budget).collect();
    let stopped_early = to_run.len() < pending.len();
    info!(total = samples.len(), skipped, running = to_run.len(), "starting batch");

    let processed = futures::stream::iter(to_run.iter().copied())
        .map(|sample| {
            let pipeline = &pipeline;
            let store = &store;
            async move {
                let outcome = pipeline.run_sample_with(sample, store.as_ref()).await;
                store.save_outcome(&outcome);
                info!(sample = %sample.id, failed = outcome.is_failed(), "sample done");
            }
        })
        .buffer_unordered(config.max_concurrency.max(1))
        .count()
        .await;
    store.check()?;

    if options.verdict_alone && !stopped_early {
        let missing: Vec<&Sample> = samples.iter().filter(|s| store.bare_verdict(&s.id).is_none()).collect();
        futures::stream::iter(missing)
            .map(|sample| {
                let pipeline = &pipeline;
                let store = &store;
                async move {
                    match pipeline.run_bare_verdict(sample).await {
                        Ok(bare) => store.save_bare_verdict(&bare),
                        Err(e) => tracing::warn!(sample = %sample.id, "bare verdict failed: {e}"),
                    }
                }
            })
            .buffer_unordered(config.max_concurrency.max(1))
            .count()
            .await;
        store.check()?;
    }

    let network_calls = client.network_calls();
    if stopped_early {
        return Ok(BatchRun {
            processed,
            skipped,
            network_calls,
            summary: None,
        });
    }

    let order = manifest.ids();
    store.compact(&order)?;
    let outcomes = store.outcomes_in(&order);
    let bare = store.bare_verdicts();
    let summary = summarize(&outcomes, &config, manifest.benchmark, Some(&bare))?;
    store.write_json(SUMMARY_JSON, &summary)?;
    store.write_text(SUMMARY_TXT, &summary.to_text())?;
    store.write_json(
        META_FILE,
        &json!({
            "started_at": started_at.to_rfc3339(),
            "finished_at": chrono::Utc::now().to_rfc3339(),
            "elapsed_ms": started.elapsed().as_millis() as u64,
            "processed": processed,
            "skipped": skipped,
            "network_calls": network_calls,
        }),
    )?;
    Ok(BatchRun {
        processed,
        skipped,
        network_calls,
        summary: Some(summary),
    })
}
