//! Per-sample protocol: candidate answers from the whole pool, consensus
//! selection, chain-of-thought from the selected experts, then one verdict
//! call that synthesizes the paths.

pub mod config;
pub mod prompts;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::answer::extract_answer;
use crate::client::{ClientError, GenParams, GenerationRecord, ModelClient, PromptParts};
use crate::consensus::{
    build_matrix, majority_vote, select_experts, ConsensusError, ConsensusMatrix, NllScore, SelectionResult,
};
use crate::types::{AnswerFormat, BenchmarkKind, CandidateAnswer, ReasoningPath, Sample, TokenUsage};

pub use config::{ConfigError, MaxTokens, RunConfig, VerdictInput, VerdictVisual};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("every draft candidate failed or produced no answer")]
    AllDraftsFailed,
    #[error("every selected expert failed")]
    AllExpertsFailed,
    #[error("no reasoning paths to send to the verdict")]
    NoPaths,
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("scoring candidate {candidate} with model {scorer}: {source}")]
    Scoring {
        scorer: usize,
        candidate: usize,
        source: ClientError,
    },
    #[error("verdict call failed: {0}")]
    Verdict(ClientError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictResult {
    pub raw_text: String,
    pub extracted: Option<String>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    Failed,
}

/// Full audit trail of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub benchmark: BenchmarkKind,
    pub gold_answers: Vec<String>,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub candidates: Vec<CandidateAnswer>,
    pub nll_scores: Vec<NllScore>,
    pub matrix: Option<ConsensusMatrix>,
    pub selection: Option<SelectionResult>,
    pub paths: Vec<ReasoningPath>,
    /// Majority over the selected experts' answers.
    pub majority_answer: Option<String>,
    pub verdict: Option<VerdictResult>,
    pub records: Vec<GenerationRecord>,
    pub usage_by_model: BTreeMap<String, TokenUsage>,
}

impl SampleOutcome {
    fn new(sample: &Sample) -> Self {
        Self {
            sample_id: sample.id.clone(),
            benchmark: sample.benchmark,
            gold_answers: sample.gold_answers.clone(),
            status: OutcomeStatus::Ok,
            error: None,
            candidates: Vec::new(),
            nll_scores: Vec::new(),
            matrix: None,
            selection: None,
            paths: Vec::new(),
            majority_answer: None,
            verdict: None,
            records: Vec::new(),
            usage_by_model: BTreeMap::new(),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status == OutcomeStatus::Failed
    }

    /// Majority over all `k` candidate answers.
    pub fn pool_majority(&self) -> Option<String> {
        majority_vote(self.candidates.iter().map(|c| c.extracted.as_deref())).ok()
    }

    fn absorb(&mut self, records: Vec<GenerationRecord>) {
        for r in &records {
            *self.usage_by_model.entry(r.model.clone()).or_default() += r.usage;
        }
        self.records.extend(records);
    }

    fn fail(&mut self, err: PipelineError) {
        warn!(sample = %self.sample_id, "sample failed: {err}");
        self.status = OutcomeStatus::Failed;
        self.error = Some(err.to_string());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Candidates,
    Scores,
    Selection,
    Paths,
    Verdict,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Candidates,
        Stage::Scores,
        Stage::Selection,
        Stage::Paths,
        Stage::Verdict,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Candidates => "candidates.jsonl",
            Stage::Scores => "scores.jsonl",
            Stage::Selection => "selection.jsonl",
            Stage::Paths => "paths.jsonl",
            Stage::Verdict => "verdict.jsonl",
        }
    }
}

/// Receives each stage's record as soon as the stage completes.
pub trait StageSink: Send + Sync {
    fn record(&self, sample_id: &str, stage: Stage, payload: Value);
}

struct NoSink;

impl StageSink for NoSink {
    fn record(&self, _: &str, _: Stage, _: Value) {}
}

/// Answer of the verdict model prompted alone with the chain-of-thought template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BareVerdict {
    pub id: String,
    pub answer: Option<String>,
    pub raw_text: String,
    pub usage: TokenUsage,
}

#[derive(Clone)]
pub struct Pipeline {
    config: Arc<RunConfig>,
    client: ModelClient,
}

impl Pipeline {
    pub fn new(config: Arc<RunConfig>, client: ModelClient) -> Self {
        Self { config, client }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn client(&self) -> &ModelClient {
        &self.client
    }

    fn params(&self, max_tokens: u32) -> GenParams {
        GenParams {
            temperature: self.config.temperature,
            max_tokens,
        }
    }

    /// Prompt for one expert's chain-of-thought.
    pub fn reasoning_prompt(&self, sample: &Sample) -> PromptParts {
        PromptParts {
            system: None,
            user: prompts::reasoning_prompt(sample, &self.config.question_type_prompts),
            images: vec![sample.image.clone()],
        }
    }

    fn candidate_prompt(&self, sample: &Sample) -> (PromptParts, AnswerFormat, u32) {
        if self.config.economy_mode {
            return (
                self.reasoning_prompt(sample),
                self.config.reasoning_format_for(sample.benchmark),
                self.config.max_tokens.reasoning,
            );
        }
        let prompt = PromptParts {
            system: None,
            user: prompts::candidate_prompt(sample),
            images: vec![sample.image.clone()],
        };
        (prompt, AnswerFormat::Boxed, self.config.max_tokens.answer)
    }

    /// First draft round: one short answer per pool member, issued concurrently.
    /// A failed endpoint yields an invalid candidate.
    pub async fn draft_answers(&self, sample: &Sample) -> (Vec<CandidateAnswer>, Vec<GenerationRecord>) {
        let (prompt, format, max_tokens) = self.candidate_prompt(sample);
        let params = self.params(max_tokens);
        let calls = self.config.pool.iter().map(|spec| {
            let prompt = &prompt;
            async move { self.client.generate(spec, prompt, params).await }
        });
        let results = join_all(calls).await;

        let mut candidates = Vec::with_capacity(results.len());
        let mut records = Vec::with_capacity(results.len());
        for (i, result) in results.into_iter().enumerate() {
            let spec = &self.config.pool[i];
            match result {
                Ok(record) => {
                    let extracted = extract_answer(&record.output_text, format);
                    candidates.push(CandidateAnswer::new(i, record.output_text.clone(), extracted));
                    records.push(record);
                }
                Err(e) => {
                    warn!(sample = %sample.id, model = %spec.name, "candidate failed: {e}");
                    candidates.push(CandidateAnswer::invalid(i));
                    let digest = self.client.prompt_digest_for(spec, &prompt).unwrap_or_default();
                    records.push(GenerationRecord::failed(&spec.name, digest));
                }
            }
        }
        (candidates, records)
    }

    /// Score every valid candidate under every valid pool member and select experts.
    ///
    /// Scores depend only on the answer text, so each scorer scores each
    /// distinct answer once.
    pub async fn consensus_select(
        &self,
        sample: &Sample,
        candidates: &[CandidateAnswer],
    ) -> Result<(Vec<NllScore>, ConsensusMatrix, SelectionResult), PipelineError> {
        let valid: Vec<usize> = candidates.iter().filter(|c| c.valid).map(|c| c.model_index).collect();
        if valid.is_empty() {
            return Err(ConsensusError::NoValidCandidates.into());
        }

        let mut nll = Vec::new();
        if valid.len() > 1 {
            let mut distinct: Vec<&str> = Vec::new();
            for &i in &valid {
                let a = candidates[i].extracted.as_deref().expect("valid has answer");
                if !distinct.contains(&a) {
                    distinct.push(a);
                }
            }
            let jobs: Vec<(usize, &str)> = valid
                .iter()
                .flat_map(|&j| distinct.iter().map(move |a| (j, *a)))
                .collect();
            let calls = jobs.iter().map(|&(j, answer)| {
                let spec = &self.config.pool[j];
                async move {
                    self.client
                        .score_answer_nll(spec, &sample.image, &sample.question, answer)
                        .await
                }
            });
            let results = join_all(calls).await;
            let mut by_answer: HashMap<(usize, &str), NllScore> = HashMap::new();
            for (&(j, answer), result) in jobs.iter().zip(results) {
                let candidate = valid
                    .iter()
                    .copied()
                    .find(|&i| candidates[i].extracted.as_deref() == Some(answer))
                    .expect("answer came from a candidate");
                let score = result.map_err(|source| PipelineError::Scoring {
                    scorer: j,
                    candidate,
                    source,
                })?;
                by_answer.insert((j, answer), score);
            }
            for &j in &valid {
                for &i in &valid {
                    let answer = candidates[i].extracted.as_deref().expect("valid has answer");
                    let s = by_answer[&(j, answer)];
                    nll.push(NllScore {
                        scorer_index: j,
                        candidate_index: i,
                        ..s
                    });
                }
            }
        }

        let matrix = build_matrix(&nll, candidates)?;
        let selection = select_experts(&matrix, self.config.strategy, self.config.m, self.config.reference)?;
        debug!(sample = %sample.id, chosen = ?selection.chosen, "experts selected");
        Ok((nll, matrix, selection))
    }

    /// Second draft round: chain-of-thought from each chosen expert, in
    /// selection order. A failed expert leaves a placeholder with `error` set.
    pub async fn draft_reasoning(
        &self,
        sample: &Sample,
        selection: &SelectionResult,
        candidates: &[CandidateAnswer],
    ) -> Result<(Vec<ReasoningPath>, Vec<GenerationRecord>), PipelineError> {
        if selection.chosen.is_empty() {
            return Err(PipelineError::NoPaths);
        }
        let format = self.config.reasoning_format_for(sample.benchmark);

        if self.config.economy_mode {
            let paths = selection
                .chosen
                .iter()
                .map(|&i| ReasoningPath {
                    expert_index: i,
                    cot_text: candidates[i].raw_text.clone(),
                    extracted: candidates[i].extracted.clone(),
                    // already counted in the first round
                    usage: TokenUsage::default(),
                    error: None,
                })
                .collect();
            return Ok((paths, Vec::new()));
        }

        let prompt = self.reasoning_prompt(sample);
        let params = self.params(self.config.max_tokens.reasoning);
        let calls = selection.chosen.iter().map(|&i| {
            let spec = &self.config.pool[i];
            let prompt = &prompt;
            async move { self.client.generate(spec, prompt, params).await }
        });
        let results = join_all(calls).await;

        let mut paths = Vec::new();
        let mut records = Vec::new();
        for (&i, result) in selection.chosen.iter().zip(results) {
            let spec = &self.config.pool[i];
            match result {
                Ok(record) if !record.output_text.is_empty() => {
                    paths.push(ReasoningPath {
                        expert_index: i,
                        cot_text: record.output_text.clone(),
                        extracted: extract_answer(&record.output_text, format),
                        usage: record.usage,
                        error: None,
                    });
                    records.push(record);
                }
                other => {
                    let reason = match &other {
                        Ok(_) => "empty reasoning output".to_owned(),
                        Err(e) => e.to_string(),
                    };
                    warn!(sample = %sample.id, model = %spec.name, "expert failed: {reason}");
                    let record = match other {
                        Ok(r) => r,
                        Err(_) => GenerationRecord::failed(
                            &spec.name,
                            self.client.prompt_digest_for(spec, &prompt).unwrap_or_default(),
                        ),
                    };
                    paths.push(ReasoningPath {
                        expert_index: i,
                        cot_text: String::new(),
                        extracted: None,
                        usage: record.usage,
                        error: Some(reason),
                    });
                    records.push(record);
                }
            }
        }
        if paths.iter().all(|p| !p.is_ok()) {
            return Err(PipelineError::AllExpertsFailed);
        }
        Ok((paths, records))
    }

    /// Verdict prompt over the successful paths, ordered by ascending global score.
    pub fn assemble_verdict_prompt(
        &self,
        sample: &Sample,
        paths: &[ReasoningPath],
        selection: &SelectionResult,
    ) -> Result<PromptParts, PipelineError> {
        let ordered: Vec<&ReasoningPath> = selection
            .by_ascending_score()
            .into_iter()
            .filter_map(|i| paths.iter().find(|p| p.expert_index == i && p.is_ok()))
            .collect();
        if ordered.is_empty() {
            return Err(PipelineError::NoPaths);
        }
        let parts = prompts::verdict_prompt(sample, &ordered, self.config.verdict_input, self.config.verdict_visual);
        Ok(if self.config.verdict.merge_system_prompt {
            parts.folded()
        } else {
            parts
        })
    }

    pub async fn run_sample(&self, sample: &Sample) -> SampleOutcome {
        self.run_sample_with(sample, &NoSink).await
    }

    /// Run every stage in order, handing each stage's record to `sink`.
    /// Stage errors end up in the outcome; they never panic or abort a batch.
    pub async fn run_sample_with(&self, sample: &Sample, sink: &dyn StageSink) -> SampleOutcome {
        let mut outcome = SampleOutcome::new(sample);
        if let Err(e) = self.run_stages(sample, sink, &mut outcome).await {
            outcome.fail(e);
        }
        outcome
    }

    async fn run_stages(
        &self,
        sample: &Sample,
        sink: &dyn StageSink,
        outcome: &mut SampleOutcome,
    ) -> Result<(), PipelineError> {
        let id = sample.id.as_str();

        let (candidates, records) = self.draft_answers(sample).await;
        sink.record(
            id,
            Stage::Candidates,
            json!({"id": id, "candidates": candidates, "records": records}),
        );
        outcome.candidates = candidates;
        outcome.absorb(records);
        if outcome.candidates.iter().all(|c| !c.valid) {
            return Err(PipelineError::AllDraftsFailed);
        }

        let (nll, matrix, selection) = self.consensus_select(sample, &outcome.candidates).await?;
        sink.record(id, Stage::Scores, json!({"id": id, "nll_scores": nll}));
        sink.record(
            id,
            Stage::Selection,
            json!({"id": id, "matrix": matrix, "selection": selection}),
        );
        outcome.nll_scores = nll;
        outcome.matrix = Some(matrix);
        outcome.selection = Some(selection.clone());

        let (paths, records) = self.draft_reasoning(sample, &selection, &outcome.candidates).await?;
        sink.record(id, Stage::Paths, json!({"id": id, "paths": paths, "records": records}));
        outcome.paths = paths;
        outcome.absorb(records);

        let mut by_index: Vec<&ReasoningPath> = outcome.paths.iter().filter(|p| p.is_ok()).collect();
        by_index.sort_by_key(|p| p.expert_index);
        outcome.majority_answer = majority_vote(by_index.iter().map(|p| p.extracted.as_deref())).ok();

        let prompt = self.assemble_verdict_prompt(sample, &outcome.paths, &selection)?;
        let verdict_spec = &self.config.verdict;
        let record = self
            .client
            .generate(verdict_spec, &prompt, self.params(self.config.max_tokens.verdict))
            .await
            .map_err(PipelineError::Verdict)?;
        let verdict = VerdictResult {
            raw_text: record.output_text.clone(),
            extracted: extract_answer(&record.output_text, AnswerFormat::Boxed),
            usage: record.usage,
        };
        sink.record(
            id,
            Stage::Verdict,
            json!({"id": id, "verdict": verdict, "record": record}),
        );
        outcome.verdict = Some(verdict);
        outcome.absorb(vec![record]);
        Ok(())
    }

    /// The verdict model answering alone, used to condition recovery analysis.
    pub async fn run_bare_verdict(&self, sample: &Sample) -> Result<BareVerdict, PipelineError> {
        let prompt = self.reasoning_prompt(sample);
        let record = self
            .client
            .generate(
                &self.config.verdict,
                &prompt,
                self.params(self.config.max_tokens.reasoning),
            )
            .await?;
        Ok(BareVerdict {
            id: sample.id.clone(),
            answer: extract_answer(&record.output_text, self.config.reasoning_format_for(sample.benchmark)),
            raw_text: record.output_text,
            usage: record.usage,
        })
    }
}
