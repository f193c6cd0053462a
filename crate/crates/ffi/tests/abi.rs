use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use verdict_core::consensus::NllScore;
use verdict_core::consensus::{build_matrix, global_scores, select_experts, SelectionStrategy};
use verdict_core::types::CandidateAnswer;
use verdict_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = verdict_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    verdict_string_free(p);
    s
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

const K: usize = 4;
// scorer-major; candidate 2 is invalid
const NLL: [f64; 16] = [
    0.2, 0.5, 0.0, 3.0, //
    0.6, 0.1, 0.0, 2.0, //
    0.0, 0.0, 0.0, 0.0, //
    1.0, 0.9, 0.0, 0.3,
];
const VALID: [u8; 4] = [1, 1, 0, 1];

fn core_reference() -> (Vec<f64>, Vec<usize>) {
    let candidates: Vec<_> = (0..K)
        .map(|i| {
            if VALID[i] == 1 {
                CandidateAnswer::new(i, String::new(), Some("x".into()))
            } else {
                CandidateAnswer::invalid(i)
            }
        })
        .collect();
    let mut scores = Vec::new();
    for j in (0..K).filter(|&j| VALID[j] == 1) {
        for i in (0..K).filter(|&i| VALID[i] == 1) {
            scores.push(NllScore {
                scorer_index: j,
                candidate_index: i,
                mean_nll: NLL[j * K + i],
                token_count: 1,
            });
        }
    }
    let m = build_matrix(&scores, &candidates).unwrap();
    (
        global_scores(&m),
        select_experts(&m, SelectionStrategy::CrossAll, 2, None).unwrap().chosen,
    )
}

#[test]
fn consensus_handle_matches_core() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(
            verdict_consensus_new(K, NLL.as_ptr(), VALID.as_ptr(), &mut h),
            VerdictStatus::Ok
        );
        assert_eq!(verdict_consensus_k(h), K);

        let mut rel = [0.0; K * K];
        assert_eq!(verdict_consensus_relative(h, rel.as_mut_ptr()), VerdictStatus::Ok);
        assert_eq!(rel[1], (0.5f64 - 0.2).abs());
        assert!(rel[2].is_infinite());

        let mut global = [0.0; K];
        assert_eq!(
            verdict_consensus_global_scores(h, global.as_mut_ptr()),
            VerdictStatus::Ok
        );
        let (want_global, want_chosen) = core_reference();
        assert_eq!(global.to_vec(), want_global);

        let (mut chosen, mut len) = ([usize::MAX; 2], 0usize);
        let st = verdict_consensus_select(
            h,
            VerdictStrategy::CrossAll as u32,
            2,
            -1,
            chosen.as_mut_ptr(),
            &mut len,
        );
        assert_eq!(st, VerdictStatus::Ok);
        assert_eq!(chosen[..len].to_vec(), want_chosen);

        let st = verdict_consensus_select(
            h,
            VerdictStrategy::BestReference as u32,
            2,
            -1,
            chosen.as_mut_ptr(),
            &mut len,
        );
        assert_eq!(st, VerdictStatus::Consensus);
        assert!(last_error().contains("reference"));
        let st = verdict_consensus_select(h, 7, 2, -1, chosen.as_mut_ptr(), &mut len);
        assert_eq!(st, VerdictStatus::InvalidArgument);
        verdict_consensus_free(h);
    }
}

#[test]
fn bad_inputs_return_status_codes() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(
            verdict_consensus_new(K, ptr::null(), VALID.as_ptr(), &mut h),
            VerdictStatus::NullPointer
        );
        assert!(last_error().contains("nll"));
        let mut bad = NLL;
        bad[1] = f64::NAN;
        assert_eq!(
            verdict_consensus_new(K, bad.as_ptr(), VALID.as_ptr(), &mut h),
            VerdictStatus::InvalidArgument
        );
        assert!(h.is_null());
        // nothing valid: the matrix builds, selection refuses
        assert_eq!(
            verdict_consensus_new(K, NLL.as_ptr(), [0u8; 4].as_ptr(), &mut h),
            VerdictStatus::Ok
        );
        let (mut chosen, mut len) = ([0usize; 1], 0usize);
        assert_eq!(
            verdict_consensus_select(h, 0, 1, -1, chosen.as_mut_ptr(), &mut len),
            VerdictStatus::Consensus
        );
        assert!(last_error().contains("no valid"));
        verdict_consensus_free(h);

        let mut out = 0usize;
        let invalid = [0xffu8, 0xfe, 0];
        let st = verdict_levenshtein(invalid.as_ptr().cast(), c("a").as_ptr(), &mut out);
        assert_eq!(st, VerdictStatus::InvalidUtf8);
        assert_eq!(verdict_consensus_k(ptr::null()), 0);
        verdict_consensus_free(ptr::null_mut());
        verdict_string_free(ptr::null_mut());
    }
}

#[test]
fn string_and_metric_functions() {
    unsafe {
        let mut s = ptr::null_mut();
        let text = c("so the answer is \\boxed{ 49% }.");
        assert_eq!(
            verdict_extract_answer(text.as_ptr(), VerdictAnswerFormat::Boxed as u32, &mut s),
            VerdictStatus::Ok
        );
        assert_eq!(take(s), "49%");
        let none = c("no marker here");
        assert_eq!(
            verdict_extract_answer(none.as_ptr(), 0, &mut s),
            VerdictStatus::NoAnswer
        );

        assert_eq!(
            verdict_normalize_answer(c("  North ").as_ptr(), &mut s),
            VerdictStatus::Ok
        );
        assert_eq!(take(s), verdict_core::answer::normalize_answer("  North "));

        let mut d = 0usize;
        assert_eq!(
            verdict_levenshtein(c("kitten").as_ptr(), c("sitting").as_ptr(), &mut d),
            VerdictStatus::Ok
        );
        assert_eq!(d, 3);

        let golds = [c("49%"), c("forty-nine")];
        let ptrs: Vec<*const c_char> = golds.iter().map(|g| g.as_ptr()).collect();
        let mut v = 0.0;
        assert_eq!(
            verdict_anls(c("49").as_ptr(), ptrs.as_ptr(), 2, 0.5, &mut v),
            VerdictStatus::Ok
        );
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            verdict_anls(c("49").as_ptr(), ptrs.as_ptr(), 2, 1.5, &mut v),
            VerdictStatus::InvalidArgument
        );

        let mut ok = false;
        assert_eq!(
            verdict_relaxed_accuracy(c("104").as_ptr(), c("100").as_ptr(), 0.05, &mut ok),
            VerdictStatus::Ok
        );
        assert!(ok);
        assert_eq!(
            verdict_letter_match(c("(B)").as_ptr(), c("B").as_ptr(), &mut ok),
            VerdictStatus::Ok
        );
        assert!(ok);
    }
    assert_eq!(verdict_estimate_cost(2520, 50, 2.5, 10.0), 0.0068);
}

#[test]
fn runner_replays_the_demo_against_the_mock() {
    let d = demo();
    let tmp = tempfile::tempdir().unwrap();
    let out = c(tmp.path().join("run").to_str().unwrap());
    unsafe {
        let mut mock = ptr::null_mut();
        let scenario = c(d.join("scenario.json").to_str().unwrap());
        assert_eq!(verdict_mock_start(scenario.as_ptr(), 0, &mut mock), VerdictStatus::Ok);
        let port = verdict_mock_port(mock);
        assert_ne!(port, 0);

        let mut runner = ptr::null_mut();
        let config = c(d.join("config.toml").to_str().unwrap());
        assert_eq!(verdict_runner_new(config.as_ptr(), &mut runner), VerdictStatus::Ok);
        let url = c(&format!("http://127.0.0.1:{port}"));
        assert_eq!(verdict_runner_set_base_url(runner, url.as_ptr()), VerdictStatus::Ok);

        let manifest = c(d.join("manifest.jsonl").to_str().unwrap());
        let mut json = ptr::null_mut();
        assert_eq!(
            verdict_runner_run(runner, manifest.as_ptr(), out.as_ptr(), false, &mut json),
            VerdictStatus::Ok,
            "{}",
            last_error()
        );
        let summary: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(summary["metrics"]["primary_metric"], 100.0);
        let calls = verdict_mock_request_count(mock);
        assert!(calls > 0);

        // resuming a finished run issues no requests
        assert_eq!(
            verdict_runner_run(runner, manifest.as_ptr(), out.as_ptr(), true, &mut json),
            VerdictStatus::Ok
        );
        verdict_string_free(json);
        assert_eq!(verdict_mock_request_count(mock), calls);

        let missing = c("/nonexistent/config.toml");
        let mut other = ptr::null_mut();
        assert_eq!(verdict_runner_new(missing.as_ptr(), &mut other), VerdictStatus::Config);
        assert!(last_error().contains("nonexistent"));

        verdict_runner_free(runner);
        verdict_mock_stop(mock);
    }
}
