//! Self-contained scripted bundles: manifest, scenario, config and images.
//!
//! `demo` holds two hand-authored InfographicVQA cases, one where a single
//! selected expert is right and one where none is. `ablation` is a larger
//! synthetic set in which agreeing candidates are the correct ones.

use std::path::Path;

use crate::client::{ModelSpec, Pricing};
use crate::pipeline::RunConfig;
use crate::types::{BenchmarkKind, TokenUsage};

use super::manifest::{Manifest, ManifestEntry};
use super::scenario::{Endpoint, Rule, Scenario};

/// A valid 1x1 RGBA PNG.
pub const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0a, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d, 0xb4, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

pub const POOL: [&str; 5] = ["draft-A", "draft-B", "draft-C", "draft-D", "draft-E"];
pub const VERDICT_MODEL: &str = "gpt-4o";
pub const DEFAULT_MOCK_URL: &str = "http://127.0.0.1:8089";

/// Fragments that tell the prompt kinds apart.
const CANDIDATE_MARK: &str = "Answer the question using a single word or phrase";
const REASONING_MARK: &str = "Please think step-by-step";
const VERDICT_MARK: &str = "--- Model 1 ---";

const CANDIDATE_USAGE: TokenUsage = TokenUsage::new(900, 8);
const REASONING_USAGE: TokenUsage = TokenUsage::new(1200, 310);
/// Lands the verdict at $0.0068 per sample at $2.50 / $10.00 per million.
const VERDICT_USAGE: TokenUsage = TokenUsage::new(2520, 50);

pub struct Bundle {
    pub manifest: Manifest,
    pub scenario: Scenario,
    pub config: RunConfig,
    /// File name and bytes, relative to the bundle directory.
    pub images: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        for (name, bytes) in &self.images {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join("manifest.jsonl"), self.manifest.to_jsonl())?;
        std::fs::write(dir.join("scenario.json"), self.scenario.to_json())?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml_string())
    }
}

fn pool_config(base_url: &str, m: usize) -> RunConfig {
    let pool = POOL.iter().map(|n| ModelSpec::new(*n, base_url)).collect();
    let mut verdict = ModelSpec::new(VERDICT_MODEL, base_url);
    verdict.pricing = Pricing {
        input_per_million: 2.5,
        output_per_million: 10.0,
    };
    let mut config = RunConfig::new(pool, verdict);
    config.benchmark = Some(BenchmarkKind::InfographicVqa);
    config.m = m;
    config.retry_backoff_ms = 20;
    config
}

fn boxed(answer: &str) -> String {
    format!("\\boxed{{{answer}}}")
}

fn entry(id: &str, question: &str, gold: &str, aux: bool) -> ManifestEntry {
    ManifestEntry {
        id: id.into(),
        question: question.into(),
        image_path: format!("images/{id}.png"),
        aux_image_path: aux.then(|| format!("images/{id}-layout.png")),
        gold_answers: vec![gold.into()],
        question_type: None,
    }
}

/// One hand-authored case: first-round answers, the scorers' NLL table, the
/// experts' reasoning and the verdict's reply.
struct Case<'a> {
    key: &'a str,
    candidates: [&'a str; 5],
    /// `nll[j]` lists `(answer, mean NLL)` under scorer `j`.
    nll: [[(&'a str, f64); 4]; 5],
    reasoning: [(usize, &'a str); 3],
    verdict: &'a str,
    bare: &'a str,
}

impl Case<'_> {
    fn rules(&self, rules: &mut Vec<Rule>) {
        for (j, model) in POOL.iter().enumerate() {
            rules.push(
                Rule::new(*model, Endpoint::Chat)
                    .contains(self.key)
                    .contains(CANDIDATE_MARK)
                    .respond(boxed(self.candidates[j]), CANDIDATE_USAGE),
            );
            for (answer, nll) in self.nll[j] {
                rules.push(
                    Rule::new(*model, Endpoint::Score)
                        .contains(self.key)
                        .answer(answer)
                        .logprobs(vec![-nll]),
                );
            }
        }
        for (i, text) in self.reasoning {
            rules.push(
                Rule::new(POOL[i], Endpoint::Chat)
                    .contains(self.key)
                    .contains(REASONING_MARK)
                    .respond(text, REASONING_USAGE),
            );
        }
        rules.push(
            Rule::new(VERDICT_MODEL, Endpoint::Chat)
                .contains(self.key)
                .contains(VERDICT_MARK)
                .respond(self.verdict, VERDICT_USAGE),
        );
        rules.push(
            Rule::new(VERDICT_MODEL, Endpoint::Chat)
                .contains(self.key)
                .contains(REASONING_MARK)
                .respond(self.bare, REASONING_USAGE),
        );
    }
}

pub const MINORITY_CASE_ID: &str = "infovqa-players-share";
pub const ZERO_CASE_ID: &str = "infovqa-third-country";

/// Two cases: a minority-correct trio the verdict recovers from, and a
/// zero-correct trio the verdict still gets right.
pub fn demo(base_url: &str) -> Bundle {
    let players_q = "What percentage of league revenue goes to the players?";
    let players = Case {
        key: players_q,
        candidates: ["49%", "49%", "25%", "52%", "31%"],
        // globals come out as 0.4, 0.4, 0.9, 5.1, 9.7
        nll: [
            [("49%", 0.5), ("25%", 0.7), ("52%", 2.0), ("31%", 3.0)],
            [("49%", 0.5), ("25%", 0.7), ("52%", 2.0), ("31%", 3.0)],
            [("49%", 0.6), ("25%", 0.5), ("52%", 2.0), ("31%", 3.0)],
            [("49%", 1.0), ("25%", 1.0), ("52%", 0.8), ("31%", 3.0)],
            [("49%", 1.0), ("25%", 1.2), ("52%", 1.5), ("31%", 0.9)],
        ],
        reasoning: [
            (
                0,
                "The revenue panel splits total league revenue between players and owners. \
                 The players' slice is labelled 49%. So the players receive \\boxed{49%}",
            ),
            (
                1,
                "The panel headed 'NFL revenue' shows a growth figure of 25% next to the players' icon. \
                 Taking that as the players' share gives \\boxed{25%}",
            ),
            (
                2,
                "Reading the number printed beside the player silhouette, the share is 25%. \
                 The answer is \\boxed{25%}",
            ),
        ],
        verdict: "Model 1 reads the revenue split directly: the players' slice is 49%. Models 2 and 3 \
                  quote 25%, which is the revenue growth figure printed next to the players' icon, not \
                  their share. The revenue split is the relevant panel.\n\\boxed{49%}",
        bare: "The players' icon sits next to 25%. \\boxed{25%}",
    };

    let country_q = "Which country has the third-highest number of visitors?";
    let country = Case {
        key: country_q,
        candidates: ["Spain", "Spain", "Australia", "Italy", "Brazil"],
        nll: [
            [("Spain", 0.5), ("Australia", 0.7), ("Italy", 2.0), ("Brazil", 3.0)],
            [("Spain", 0.5), ("Australia", 0.7), ("Italy", 2.0), ("Brazil", 3.0)],
            [("Spain", 0.6), ("Australia", 0.5), ("Italy", 2.0), ("Brazil", 3.0)],
            [("Spain", 1.0), ("Australia", 1.0), ("Italy", 0.8), ("Brazil", 3.0)],
            [("Spain", 1.0), ("Australia", 1.2), ("Italy", 1.5), ("Brazil", 0.9)],
        ],
        reasoning: [
            (
                0,
                "The bar chart lists France 89M, Spain 83M, Portugal 27M, Australia 9M. \
                 The highest after France is Spain, so \\boxed{Spain}",
            ),
            (
                1,
                "Values: France 89M, Spain 83M, Australia 9M, Portugal 27M. Sorting by position in \
                 the list, the third entry is \\boxed{Australia}",
            ),
            (
                2,
                "The legend shows Italy in the third colour band, so the third-highest is \\boxed{Italy}",
            ),
        ],
        verdict: "Combining the extracted values (France 89M, Spain 83M, Portugal 27M, Australia 9M) and \
                  sorting them in descending order, the third-highest is Portugal.\n\\boxed{Portugal}",
        bare: "The third bar from the top is Australia. \\boxed{Australia}",
    };

    let mut rules = Vec::new();
    players.rules(&mut rules);
    country.rules(&mut rules);
    let mut scenario = Scenario::new(rules);
    scenario.description = Some("minority-correct and zero-correct recovery cases".into());

    let entries = vec![
        entry(MINORITY_CASE_ID, players_q, "49%", true),
        entry(ZERO_CASE_ID, country_q, "Portugal", false),
    ];
    let mut images: Vec<(String, Vec<u8>)> = entries
        .iter()
        .flat_map(|e| std::iter::once(e.image_path.clone()).chain(e.aux_image_path.clone()))
        .map(|p| (p, TINY_PNG.to_vec()))
        .collect();
    images.sort();

    Bundle {
        manifest: Manifest {
            benchmark: BenchmarkKind::InfographicVqa,
            base_dir: ".".into(),
            entries,
        },
        scenario,
        config: pool_config(base_url, 3),
        images,
    }
}

pub fn ablation_gold(s: usize) -> String {
    format!("alpha-{s:02}")
}

fn ablation_wrong(p: usize, s: usize) -> String {
    const WORDS: [&str; 5] = ["kilo", "zulu", "echo", "yank", "quad"];
    format!("{}{s}", WORDS[p])
}

/// Pool members answering sample `s` correctly.
pub fn ablation_correct(s: usize) -> Vec<usize> {
    let c = 2 + s % 2;
    (0..c).map(|t| (s + t) % POOL.len()).collect()
}

/// Correct expert paths the verdict needs to see before it answers correctly.
pub fn ablation_needed(s: usize) -> usize {
    ablation_correct(s).len() - 1
}

/// `n` samples over the five-model pool. On every sample the correct models
/// agree while each wrong model answers differently, so agreement tracks
/// correctness. Every path carries a marker `[sNN:mP]`; the verdict answers
/// correctly once it sees enough markers from correct experts.
pub fn ablation(base_url: &str, n: usize) -> Bundle {
    let mut rules = Vec::new();
    let mut entries = Vec::new();
    for s in 1..=n {
        let key = format!("[s{s:02}]");
        let question = format!("{key} Which label is highlighted in panel {s}?");
        let gold = ablation_gold(s);
        let correct = ablation_correct(s);
        let answer_of = |p: usize| {
            if correct.contains(&p) {
                gold.clone()
            } else {
                ablation_wrong(p, s)
            }
        };
        let answers: Vec<String> = (0..POOL.len()).map(answer_of).collect();
        let mut distinct = answers.clone();
        distinct.sort();
        distinct.dedup();

        for (p, model) in POOL.iter().enumerate() {
            rules.push(
                Rule::new(*model, Endpoint::Chat)
                    .contains(&key)
                    .contains(CANDIDATE_MARK)
                    .respond(boxed(&answers[p]), CANDIDATE_USAGE),
            );
            rules.push(
                Rule::new(*model, Endpoint::Chat)
                    .contains(&key)
                    .contains(REASONING_MARK)
                    .respond(
                        format!("Evidence [s{s:02}:m{p}] points to this label. {}", boxed(&answers[p])),
                        REASONING_USAGE,
                    ),
            );
            for a in &distinct {
                let nll = if *a == answers[p] { 0.5 } else { 3.0 };
                rules.push(
                    Rule::new(*model, Endpoint::Score)
                        .contains(&key)
                        .answer(a.clone())
                        .logprobs(vec![-nll]),
                );
            }
        }

        let need = ablation_needed(s);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        if need == 1 {
            groups.extend(correct.iter().map(|&p| vec![p]));
        } else {
            for (i, &p) in correct.iter().enumerate() {
                for &q in &correct[i + 1..] {
                    groups.push(vec![p, q]);
                }
            }
        }
        for g in groups {
            let mut rule = Rule::new(VERDICT_MODEL, Endpoint::Chat)
                .contains(&key)
                .contains(VERDICT_MARK);
            for p in g {
                rule = rule.contains(format!("[s{s:02}:m{p}]"));
            }
            rules.push(rule.respond(
                format!("The agreeing paths support it. {}", boxed(&gold)),
                VERDICT_USAGE,
            ));
        }
        rules.push(
            Rule::new(VERDICT_MODEL, Endpoint::Chat)
                .contains(&key)
                .contains(VERDICT_MARK)
                .respond(format!("Unclear. {}", boxed("none")), VERDICT_USAGE),
        );

        entries.push(ManifestEntry {
            id: format!("s{s:02}"),
            question,
            image_path: "images/panel.png".into(),
            aux_image_path: None,
            gold_answers: vec![gold],
            question_type: None,
        });
    }
    let mut scenario = Scenario::new(rules);
    scenario.description = Some(format!("{n}-sample synthetic ablation set"));
    Bundle {
        manifest: Manifest {
            benchmark: BenchmarkKind::InfographicVqa,
            base_dir: ".".into(),
            entries,
        },
        scenario,
        config: pool_config(base_url, 3),
        images: vec![("images/panel.png".into(), TINY_PNG.to_vec())],
    }
}
