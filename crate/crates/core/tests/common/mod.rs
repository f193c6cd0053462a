//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance target. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use verdict_core::consensus::NllScore;
use verdict_core::harness::synth::Bundle;
use verdict_core::types::{CandidateAnswer, ReasoningPath, TokenUsage};

/// One sample's scoring inputs: `nll[j][i]` is scorer `j`'s mean NLL of candidate `i`.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub nll: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

impl Fixture {
    pub fn k(&self) -> usize {
        self.valid.len()
    }

    pub fn random(rng: &mut impl Rng, k: usize, p_invalid: f64) -> Self {
        let nll = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(0.0..5.0)).collect())
            .collect();
        let mut valid: Vec<bool> = (0..k).map(|_| !rng.random_bool(p_invalid)).collect();
        if !valid.iter().any(|v| *v) {
            let keep = rng.random_range(0..k);
            valid[keep] = true;
        }
        Fixture { nll, valid }
    }

    /// Scores for every valid (scorer, candidate) pair, as the pipeline would collect them.
    pub fn scores(&self) -> Vec<NllScore> {
        let mut out = Vec::new();
        for j in 0..self.k() {
            for i in 0..self.k() {
                if self.valid[j] && self.valid[i] {
                    out.push(NllScore {
                        scorer_index: j,
                        candidate_index: i,
                        mean_nll: self.nll[j][i],
                        token_count: 1,
                    });
                }
            }
        }
        out
    }

    pub fn candidates(&self) -> Vec<CandidateAnswer> {
        (0..self.k())
            .map(|i| {
                if self.valid[i] {
                    CandidateAnswer::new(i, format!("\\boxed{{a{i}}}"), Some(format!("a{i}")))
                } else {
                    CandidateAnswer::invalid(i)
                }
            })
            .collect()
    }

    /// Relabel models: new index `perm[i]` holds what was at index `i`.
    pub fn permuted(&self, perm: &[usize]) -> Fixture {
        let k = self.k();
        let mut nll = vec![vec![0.0; k]; k];
        let mut valid = vec![false; k];
        for j in 0..k {
            valid[perm[j]] = self.valid[j];
            for i in 0..k {
                nll[perm[j]][perm[i]] = self.nll[j][i];
            }
        }
        Fixture { nll, valid }
    }
}

pub struct OracleResult {
    pub relative: Vec<Vec<f64>>,
    pub global: Vec<f64>,
    pub cross_all: Vec<usize>,
}

/// Enumerate every ordered pair, sum per column, then pick by repeated minimum scan.
pub fn brute_force(f: &Fixture, m: usize) -> OracleResult {
    let k = f.k();
    let mut relative = vec![vec![0.0; k]; k];
    for (j, row) in relative.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = if i == j {
                0.0
            } else if !f.valid[i] {
                f64::INFINITY
            } else if !f.valid[j] {
                0.0
            } else {
                (f.nll[j][i] - f.nll[j][j]).abs()
            };
        }
    }
    let mut global = vec![0.0; k];
    for (i, g) in global.iter_mut().enumerate() {
        for (j, row) in relative.iter().enumerate() {
            if j != i {
                *g += row[i];
            }
        }
    }
    let mut remaining: Vec<usize> = (0..k).filter(|&i| f.valid[i]).collect();
    let mut cross_all = Vec::new();
    while cross_all.len() < m && !remaining.is_empty() {
        let mut best = 0;
        for pos in 1..remaining.len() {
            if global[remaining[pos]] < global[remaining[best]] {
                best = pos;
            }
        }
        cross_all.push(remaining.remove(best));
    }
    OracleResult {
        relative,
        global,
        cross_all,
    }
}

/// Textbook recursive edit distance, exponential but fine for length <= 8.
pub fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((ha, ta)), Some((hb, tb))) => {
            if ha == hb {
                levenshtein_oracle(ta, tb)
            } else {
                1 + levenshtein_oracle(ta, tb)
                    .min(levenshtein_oracle(ta, b))
                    .min(levenshtein_oracle(a, tb))
            }
        }
    }
}

pub fn random_word(rng: &mut impl Rng, max_len: usize, alphabet: &[char]) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect()
}

/// Cost worked out by hand from the per-million prices.
pub fn hand_cost(usage: TokenUsage, in_per_m: f64, out_per_m: f64) -> f64 {
    usage.prompt_tokens as f64 * in_per_m / 1e6 + usage.completion_tokens as f64 * out_per_m / 1e6
}

pub fn path(i: usize, cot: &str, answer: &str) -> ReasoningPath {
    ReasoningPath {
        expert_index: i,
        cot_text: cot.into(),
        extracted: Some(answer.into()),
        usage: TokenUsage::default(),
        error: None,
    }
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

pub fn golden(name: &str) -> String {
    let p = golden_dir().join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Write `bundle` into a fresh temporary directory.
pub fn materialize(bundle: &Bundle) -> tempfile::TempDir {
    let dir = tempfile::tempdir().expect("tempdir");
    bundle.write_to(dir.path()).expect("write bundle");
    dir
}

/// Stage files, outcomes and the cache of a run directory, concatenated with headers.
pub fn stage_bytes(run: &Path) -> Vec<(String, Vec<u8>)> {
    use verdict_core::harness::store::{BARE_FILE, CACHE_FILE, OUTCOMES_FILE};
    use verdict_core::pipeline::Stage;
    let mut names: Vec<&str> = Stage::ALL.iter().map(|s| s.file_name()).collect();
    names.extend([OUTCOMES_FILE, CACHE_FILE, BARE_FILE, "summary.json", "summary.txt"]);
    names
        .into_iter()
        .filter_map(|n| std::fs::read(run.join(n)).ok().map(|b| (n.to_owned(), b)))
        .collect()
}

pub const GOLDEN_QUESTION: &str = "Which region reports the highest share of remote workers?";
pub const FACT_CHECK_TEMPLATE: &str =
    "The following is a fact-checking claim about the chart. Decide whether it is true or false.\nClaim: {QUESTION}";

fn golden_sample(benchmark: verdict_core::types::BenchmarkKind, aux: bool) -> verdict_core::types::Sample {
    use verdict_core::types::{BenchmarkKind, ImageRef, Sample};
    Sample {
        id: "golden".into(),
        question: GOLDEN_QUESTION.into(),
        image: ImageRef("chart.png".into()),
        aux_image: aux.then(|| ImageRef("chart-layout.png".into())),
        gold_answers: vec!["North".into()],
        question_type: (benchmark == BenchmarkKind::ChartQaPro).then(|| "Fact Checking".into()),
        benchmark,
    }
}

/// Every assembled prompt with its golden file name, rendered through the pipeline.
/// Paths arrive out of order and one failed path is mixed in; the verdict must
/// list the survivors by ascending global score.
pub fn prompt_cases() -> Vec<(String, String)> {
    use std::sync::Arc;
    use verdict_core::client::{ClientOptions, ModelClient, ModelSpec};
    use verdict_core::consensus::{SelectionResult, SelectionStrategy};
    use verdict_core::pipeline::{Pipeline, RunConfig, VerdictInput, VerdictVisual};
    use verdict_core::types::BenchmarkKind;

    let paths = vec![
        path(0, "Reading the table row by row, North leads with 41%.", "North"),
        ReasoningPath {
            error: Some("HTTP 500".into()),
            ..path(1, "", "")
        },
        path(
            2,
            "\nLocate the legend.\nThe bar for North is tallest at 41%.\n",
            "North",
        ),
        path(4, "The map shows West shaded darkest.", "West"),
    ];
    let selection = SelectionResult {
        strategy: SelectionStrategy::CrossAll,
        chosen: vec![0, 1, 2, 4],
        global_scores: vec![3.0, 0.5, 1.0, 9.0, 2.0],
        short: false,
    };

    let pipeline = |input, visual| {
        let pool = (0..5)
            .map(|i| ModelSpec::new(format!("m{i}"), "http://unused"))
            .collect();
        let mut config = RunConfig::new(pool, ModelSpec::new("judge", "http://unused"));
        config.verdict_input = input;
        config.verdict_visual = visual;
        config
            .question_type_prompts
            .insert("Fact Checking".into(), FACT_CHECK_TEMPLATE.into());
        Pipeline::new(Arc::new(config), ModelClient::new(ClientOptions::default()))
    };
    let full = pipeline(VerdictInput::ReasoningPaths, VerdictVisual::ImagePlusAux);

    let mut out = Vec::new();
    let benches = [
        (BenchmarkKind::InfographicVqa, "infographic_vqa", true),
        (BenchmarkKind::ChartMuseum, "chartmuseum", true),
        (BenchmarkKind::ChartQaPro, "chartqapro", true),
        (BenchmarkKind::HrBench, "hr_bench", false),
    ];
    for (bench, name, aux) in benches {
        let sample = golden_sample(bench, aux);
        out.push((format!("reasoning_{name}.txt"), full.reasoning_prompt(&sample).user));
        let verdict = full
            .assemble_verdict_prompt(&sample, &paths, &selection)
            .expect("paths");
        out.push((format!("verdict_{name}.txt"), verdict.user));
        out.push(("verdict_system.txt".into(), verdict.system.expect("system prompt")));
    }
    let sample = golden_sample(BenchmarkKind::InfographicVqa, true);
    let variants = [
        ("answers_only", VerdictInput::AnswersOnly, VerdictVisual::ImagePlusAux),
        ("no_image", VerdictInput::ReasoningPaths, VerdictVisual::None),
        ("image_only", VerdictInput::ReasoningPaths, VerdictVisual::ImageOnly),
    ];
    for (suffix, input, visual) in variants {
        let p = pipeline(input, visual)
            .assemble_verdict_prompt(&sample, &paths, &selection)
            .expect("paths");
        out.push((format!("verdict_infographic_vqa_{suffix}.txt"), p.user));
    }
    out
}

/// A bundle on disk with its scenario served in-process and the config pointed at it.
pub struct Served {
    pub dir: tempfile::TempDir,
    pub server: verdict_core::harness::MockServer,
    pub manifest: verdict_core::harness::Manifest,
    pub config: verdict_core::pipeline::RunConfig,
}

pub async fn serve(bundle: &Bundle) -> Served {
    let dir = materialize(bundle);
    let server = verdict_core::harness::serve_mock(bundle.scenario.clone(), 0)
        .await
        .expect("mock server");
    let mut config = bundle.config.clone();
    retarget(&mut config, &server.base_url());
    let manifest = verdict_core::harness::ingest_manifest(&dir.path().join("manifest.jsonl"), None).expect("manifest");
    Served {
        dir,
        server,
        manifest,
        config,
    }
}

pub fn retarget(config: &mut verdict_core::pipeline::RunConfig, base_url: &str) {
    for spec in config.pool.iter_mut().chain(std::iter::once(&mut config.verdict)) {
        spec.base_url = base_url.to_owned();
    }
}
