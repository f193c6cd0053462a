use std::path::Path;
use std::process::{Command, Output};

use verdict_core::harness::batch::RunSummary;
use verdict_core::harness::scenario::Scenario;
use verdict_core::harness::synth;

fn verdict(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_verdict"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn verdict")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn demo(dir: &Path) {
    let out = verdict(&["synth", "demo", "--out", p(dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_demo(bundle: &Path, run: &Path, extra: &[&str]) -> Output {
    let manifest = bundle.join("manifest.jsonl");
    let config = bundle.join("config.toml");
    let scenario = bundle.join("scenario.json");
    let mut args = vec![
        "run",
        p(&manifest),
        "--config",
        p(&config),
        "--mock",
        p(&scenario),
        "--out",
        p(run),
    ];
    args.extend_from_slice(extra);
    verdict(&args)
}

#[test]
fn run_score_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, run) = (tmp.path().join("bundle"), tmp.path().join("run"));
    demo(&bundle);

    let out = run_demo(&bundle, &run, &["--verdict-alone"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("verdict"), "{stdout}");
    assert!(run.join("config.toml").is_file());
    assert!(run.join("meta.json").is_file());

    let before = std::fs::read(run.join("summary.json")).unwrap();
    let out = verdict(&["score", p(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(run.join("summary.json")).unwrap(), before);

    let out = verdict(&["report", p(&run), "--json"]);
    assert_eq!(code(&out), 0);
    let summary: RunSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary.metrics.primary_metric, 100.0);
    assert_eq!(summary.metrics.n_samples, 2);
}

#[test]
fn overrides_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, run) = (tmp.path().join("bundle"), tmp.path().join("run"));
    demo(&bundle);
    // divergent picks the two least agreeing models, which have no scripted reasoning
    let out = run_demo(
        &bundle,
        &run,
        &["--strategy", "divergent", "--m", "2", "--max-concurrency", "2"],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let selection = std::fs::read_to_string(run.join("selection.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(selection.lines().next().unwrap()).unwrap();
    assert_eq!(first["selection"]["chosen"], serde_json::json!([4, 3]));
    let snapshot = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("strategy = \"divergent\""));
    assert!(snapshot.contains("max_concurrency = 2"));
}

#[test]
fn per_sample_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, run) = (tmp.path().join("bundle"), tmp.path().join("run"));
    demo(&bundle);
    let path = bundle.join("scenario.json");
    let mut scenario = Scenario::load(&path).unwrap();
    scenario.rules.retain(|r| r.model != synth::VERDICT_MODEL);
    std::fs::write(&path, scenario.to_json()).unwrap();

    let out = run_demo(&bundle, &run, &[]);
    assert_eq!(code(&out), 1);
    let out = verdict(&["report", p(&run)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("(2 failed)"));
}

#[test]
fn stop_after_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, run) = (tmp.path().join("bundle"), tmp.path().join("run"));
    demo(&bundle);
    let out = run_demo(&bundle, &run, &["--stop-after", "1"]);
    assert_eq!(code(&out), 0);
    assert!(!run.join("summary.json").exists());
    let out = run_demo(&bundle, &run, &["--resume"]);
    assert_eq!(code(&out), 0);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["skipped"], 1);
    assert_eq!(meta["processed"], 1);
}

#[test]
fn usage_and_fatal_errors_exit_two() {
    assert_eq!(code(&verdict(&[])), 2);
    assert_eq!(code(&verdict(&["frobnicate"])), 2);
    assert_eq!(code(&verdict(&["run", "m.jsonl", "--out", "x"])), 2, "missing --config");
    assert_eq!(
        code(&verdict(&[
            "run",
            "m.jsonl",
            "--config",
            "c.toml",
            "--out",
            "x",
            "--strategy",
            "best"
        ])),
        2
    );

    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    demo(&bundle);
    let config = bundle.join("config.toml");
    let out = verdict(&[
        "run",
        "missing.jsonl",
        "--config",
        p(&config),
        "--out",
        p(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = verdict(&["report", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    let out = verdict(&[
        "run",
        p(&bundle.join("manifest.jsonl")),
        "--config",
        p(&config),
        "--out",
        "r",
        "--m",
        "9",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("m must be"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&verdict(&["--help"])), 0);
    assert_eq!(code(&verdict(&["--version"])), 0);
    assert_eq!(code(&verdict(&["run", "--help"])), 0);
}

#[test]
fn ablate_writes_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, out_dir) = (tmp.path().join("bundle"), tmp.path().join("sweep"));
    let out = verdict(&["synth", "ablation", "--samples", "6", "--out", p(&bundle)]);
    assert_eq!(code(&out), 0);
    let out = verdict(&[
        "ablate",
        p(&bundle.join("manifest.jsonl")),
        "--config",
        p(&bundle.join("config.toml")),
        "--mock",
        p(&bundle.join("scenario.json")),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 8);
    assert!(out_dir.join("ablation.txt").is_file());
}
