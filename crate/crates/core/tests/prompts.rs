mod common;

use std::sync::Arc;

use verdict_core::client::{ClientOptions, ModelClient, ModelSpec};
use verdict_core::consensus::{SelectionResult, SelectionStrategy};
use verdict_core::pipeline::{Pipeline, PipelineError, RunConfig};
use verdict_core::types::{BenchmarkKind, ImageRef, Sample};

#[test]
fn prompts_match_goldens() {
    let mut mismatches = Vec::new();
    for (name, actual) in common::prompt_cases() {
        let expected = common::golden(&name);
        if actual != expected {
            mismatches.push(format!("{name}:\n--- expected\n{expected:?}\n--- actual\n{actual:?}"));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n\n"));
}

#[test]
fn every_golden_is_exercised() {
    let used: std::collections::BTreeSet<String> = common::prompt_cases().into_iter().map(|(n, _)| n).collect();
    for entry in std::fs::read_dir(common::golden_dir()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(used.contains(&name), "golden {name} has no case");
    }
}

fn sample() -> Sample {
    Sample {
        id: "s".into(),
        question: "Q?".into(),
        image: ImageRef("a.png".into()),
        aux_image: None,
        gold_answers: vec!["x".into()],
        benchmark: BenchmarkKind::InfographicVqa,
        question_type: None,
    }
}

fn pipeline(merge_system: bool) -> Pipeline {
    let pool = vec![
        ModelSpec::new("m0", "http://unused"),
        ModelSpec::new("m1", "http://unused"),
    ];
    let mut verdict = ModelSpec::new("judge", "http://unused");
    verdict.merge_system_prompt = merge_system;
    let mut config = RunConfig::new(pool, verdict);
    config.m = 2;
    Pipeline::new(Arc::new(config), ModelClient::new(ClientOptions::default()))
}

fn selection() -> SelectionResult {
    SelectionResult {
        strategy: SelectionStrategy::CrossAll,
        chosen: vec![0, 1],
        global_scores: vec![0.0, 1.0],
        short: false,
    }
}

#[test]
fn folded_system_prompt_leads_the_user_turn() {
    let paths = vec![common::path(0, "r", "a"), common::path(1, "r", "b")];
    let p = pipeline(true)
        .assemble_verdict_prompt(&sample(), &paths, &selection())
        .unwrap();
    assert!(p.system.is_none());
    assert!(p.user.starts_with(&common::golden("verdict_system.txt")));
    assert!(p.user.contains("\nQuestion: \nQ?\n--- Model 1 ---"));
}

#[test]
fn without_aux_the_verdict_sees_one_image() {
    let paths = vec![common::path(0, "r", "a")];
    let p = pipeline(false)
        .assemble_verdict_prompt(&sample(), &paths, &selection())
        .unwrap();
    assert_eq!(p.images.len(), 1);
    assert!(p.user.ends_with(
        "Given the image, the question, and the reasoning from one model, please give the final answer using a single word or phrase enclosed within \\boxed{}."
    ));
}

#[test]
fn all_paths_failed_is_an_error() {
    let mut failed = common::path(0, "", "");
    failed.error = Some("timeout".into());
    let err = pipeline(false)
        .assemble_verdict_prompt(&sample(), &[failed], &selection())
        .unwrap_err();
    assert!(matches!(err, PipelineError::NoPaths));
}
