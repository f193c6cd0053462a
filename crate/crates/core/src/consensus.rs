//! Consensus scoring over answer log-likelihoods and expert selection.
//!
//! Each pool member `j` scores every valid candidate answer `y_i` by its mean
//! per-token negative log-likelihood. The relative score
//! `s_j(y_i) = |NLL_j(y_i) - NLL_j(y_j)|` normalizes against the scorer's own
//! answer, and the global score `s(y_i)` sums the relative scores over all
//! peers `j != i`. Lower is stronger agreement.
//!
//! Invalid candidates keep their index but get `+inf` columns, so indices stay
//! stable across the audit trail.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::normalize_answer;
use crate::types::CandidateAnswer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("missing NLL score: scorer {scorer} on candidate {candidate}")]
    MissingScore { scorer: usize, candidate: usize },
    #[error("no valid candidates")]
    NoValidCandidates,
    #[error("best-reference selection needs a reference model")]
    MissingReference,
    #[error("reference model {0} has no valid candidate answer")]
    InvalidReference(usize),
    #[error("expert count m must be at least 1")]
    ZeroExperts,
}

/// Mean answer-span NLL of candidate `candidate_index` under scorer `scorer_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub scorer_index: usize,
    pub candidate_index: usize,
    /// Nats per token, never negative.
    pub mean_nll: f64,
    pub token_count: usize,
}

impl NllScore {
    /// Mean of the negated token log-probabilities.
    pub fn from_logprobs(scorer_index: usize, candidate_index: usize, logprobs: &[f64]) -> Option<Self> {
        if logprobs.is_empty() || logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return None;
        }
        let sum: f64 = logprobs.iter().map(|lp| -lp).sum();
        // `+ 0.0` folds a -0.0 mean into +0.0
        let mean_nll = sum / logprobs.len() as f64 + 0.0;
        Some(Self {
            scorer_index,
            candidate_index,
            mean_nll,
            token_count: logprobs.len(),
        })
    }
}

/// `relative[j][i] = s_j(y_i)`. Diagonal is zero; invalid columns are `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    pub k: usize,
    #[serde(with = "inf_grid")]
    pub relative: Vec<Vec<f64>>,
    pub validity_mask: Vec<bool>,
}

impl ConsensusMatrix {
    pub fn is_valid(&self, i: usize) -> bool {
        self.validity_mask[i]
    }

    pub fn valid_count(&self) -> usize {
        self.validity_mask.iter().filter(|v| **v).count()
    }
}

/// Build the relative-consensus grid from all `(scorer, candidate)` NLLs of one sample.
///
/// An invalid scorer has no own answer to normalize against, so its row
/// contributes nothing.
pub fn build_matrix(nll: &[NllScore], candidates: &[CandidateAnswer]) -> Result<ConsensusMatrix, ConsensusError> {
    let k = candidates.len();
    let valid: Vec<bool> = candidates.iter().map(|c| c.valid).collect();
    let lookup: HashMap<(usize, usize), f64> = nll
        .iter()
        .map(|s| ((s.scorer_index, s.candidate_index), s.mean_nll))
        .collect();
    let get = |j: usize, i: usize| {
        lookup.get(&(j, i)).copied().ok_or(ConsensusError::MissingScore {
            scorer: j,
            candidate: i,
        })
    };

    let mut relative = vec![vec![0.0; k]; k];
    for j in 0..k {
        for i in 0..k {
            if i == j {
                continue;
            }
            relative[j][i] = if !valid[i] {
                f64::INFINITY
            } else if !valid[j] {
                0.0
            } else {
                (get(j, i)? - get(j, j)?).abs()
            };
        }
    }
    Ok(ConsensusMatrix {
        k,
        relative,
        validity_mask: valid,
    })
}

/// `s(y_i) = sum over j != i of relative[j][i]`, summed in ascending `j`.
pub fn global_scores(matrix: &ConsensusMatrix) -> Vec<f64> {
    (0..matrix.k)
        .map(|i| {
            if !matrix.is_valid(i) {
                return f64::INFINITY;
            }
            (0..matrix.k)
                .filter(|&j| j != i)
                .fold(0.0, |acc, j| acc + matrix.relative[j][i])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Lowest global consensus scores.
    #[default]
    CrossAll,
    /// A fixed reference expert plus its most consistent peers.
    BestReference,
    /// Highest global scores; the ablation counterpart of `CrossAll`.
    Divergent,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 3] = [
        SelectionStrategy::CrossAll,
        SelectionStrategy::BestReference,
        SelectionStrategy::Divergent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::CrossAll => "cross-all",
            SelectionStrategy::BestReference => "best-reference",
            SelectionStrategy::Divergent => "divergent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: SelectionStrategy,
    pub chosen: Vec<usize>,
    #[serde(with = "inf_vec")]
    pub global_scores: Vec<f64>,
    /// Fewer than `m` valid candidates were available.
    pub short: bool,
}

impl SelectionResult {
    /// Chosen experts reordered by ascending global score, ties to the lower index.
    pub fn by_ascending_score(&self) -> Vec<usize> {
        let mut order = self.chosen.clone();
        order.sort_by(|&a, &b| ascending(&self.global_scores, a, b));
        order
    }
}

fn ascending(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

fn descending(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

pub fn select_experts(
    matrix: &ConsensusMatrix,
    strategy: SelectionStrategy,
    m: usize,
    reference: Option<usize>,
) -> Result<SelectionResult, ConsensusError> {
    if m == 0 {
        return Err(ConsensusError::ZeroExperts);
    }
    let scores = global_scores(matrix);
    let mut valid: Vec<usize> = (0..matrix.k).filter(|&i| matrix.is_valid(i)).collect();
    if valid.is_empty() {
        return Err(ConsensusError::NoValidCandidates);
    }

    let chosen = match strategy {
        SelectionStrategy::CrossAll => {
            valid.sort_by(|&a, &b| ascending(&scores, a, b));
            valid.truncate(m);
            valid
        }
        SelectionStrategy::Divergent => {
            valid.sort_by(|&a, &b| descending(&scores, a, b));
            valid.truncate(m);
            valid
        }
        SelectionStrategy::BestReference => {
            let r = reference.ok_or(ConsensusError::MissingReference)?;
            if r >= matrix.k || !matrix.is_valid(r) {
                return Err(ConsensusError::InvalidReference(r));
            }
            let affinity: Vec<f64> = (0..matrix.k)
                .map(|p| matrix.relative[r][p] + matrix.relative[p][r])
                .collect();
            let mut peers: Vec<usize> = valid.into_iter().filter(|&p| p != r).collect();
            peers.sort_by(|&a, &b| ascending(&affinity, a, b));
            peers.truncate(m - 1);
            std::iter::once(r).chain(peers).collect()
        }
    };

    Ok(SelectionResult {
        strategy,
        short: chosen.len() < m,
        chosen,
        global_scores: scores,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no valid answers to vote over")]
pub struct NoValidAnswers;

/// Most frequent normalized answer. `answers` are in model-index order; ties
/// go to the answer whose first occurrence comes earliest.
pub fn majority_vote<'a, I>(answers: I) -> Result<String, NoValidAnswers>
where
    I: IntoIterator<Item = Option<&'a str>>,
{
    // (normalized answer, count, first position)
    let mut tally: Vec<(String, usize, usize)> = Vec::new();
    for (pos, answer) in answers.into_iter().enumerate() {
        let Some(answer) = answer else { continue };
        let norm = normalize_answer(answer);
        if norm.is_empty() {
            continue;
        }
        match tally.iter_mut().find(|(a, _, _)| *a == norm) {
            Some(entry) => entry.1 += 1,
            None => tally.push((norm, 1, pos)),
        }
    }
    tally
        .into_iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)))
        .map(|(answer, _, _)| answer)
        .ok_or(NoValidAnswers)
}

/// JSON has no infinity; store `+inf` as `null`.
fn encode(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn decode(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

mod inf_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| super::encode(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(super::decode).collect())
    }
}

mod inf_grid {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|row| row.iter().map(|x| super::encode(*x)).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|row| row.into_iter().map(super::decode).collect())
            .collect())
    }
}
