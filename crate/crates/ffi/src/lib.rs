//! C ABI over `verdict-core`.
//!
//! Every entry point returns a [`VerdictStatus`] (or a plain value for the
//! infallible ones), never unwinds across the boundary, and records a message
//! for the failing call in a thread-local slot read by [`verdict_last_error`].
//! Strings handed out by the library are owned by the caller and released
//! with [`verdict_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use tokio::runtime::Runtime;
use verdict_core::answer::{extract_answer, normalize_answer};
use verdict_core::client::{estimate_cost, round_usd, Pricing};
use verdict_core::consensus::{self, ConsensusMatrix, NllScore, SelectionStrategy};
use verdict_core::evaluation::{anls, letter_match, levenshtein, relaxed_accuracy};
use verdict_core::harness::{ingest_manifest, run_batch, serve_mock, BatchOptions, MockServer, RunStore, Scenario};
use verdict_core::pipeline::RunConfig;
use verdict_core::types::{AnswerFormat, CandidateAnswer, TokenUsage};

/// Result of a fallible call. Anything but `Ok` leaves a message in
/// `verdict_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// No answer could be extracted.
    NoAnswer = 4,
    Consensus = 5,
    Config = 6,
    Io = 7,
    Run = 8,
    Panic = 255,
}

/// Values accepted by `verdict_consensus_select`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum VerdictStrategy {
    CrossAll = 0,
    BestReference = 1,
    Divergent = 2,
}

/// Values accepted by `verdict_extract_answer`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum VerdictAnswerFormat {
    Boxed = 0,
    Tagged = 1,
    Letter = 2,
}

/// Relative-consensus matrix of one sample.
pub struct VerdictConsensus {
    matrix: ConsensusMatrix,
}

/// A loaded run configuration.
pub struct VerdictRunner {
    config: RunConfig,
}

/// An in-process scripted endpoint server.
pub struct VerdictMock {
    server: MockServer,
}

struct Failure {
    status: VerdictStatus,
    message: String,
}

impl Failure {
    fn new(status: VerdictStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn runtime() -> &'static Runtime {
    static RT: OnceLock<Runtime> = OnceLock::new();
    RT.get_or_init(|| {
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .thread_name("verdict-ffi")
            .build()
            .expect("building tokio runtime")
    })
}

/// Run `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult) -> VerdictStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VerdictStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            VerdictStatus::Panic
        }
    }
}

/// Same as `guard` for calls that return a bare value, `fallback` on failure.
fn guard_value<T>(fallback: T, f: impl FnOnce() -> FfiResult<T>) -> T {
    let mut out = None;
    guard(|| {
        out = Some(f()?);
        Ok(())
    });
    out.unwrap_or(fallback)
}

fn non_null<T>(p: *const T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err(Failure::new(VerdictStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(VerdictStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    non_null(p, what)?;
    Ok(&*p)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    non_null(out, what)?;
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> FfiResult<()> {
    let c =
        CString::new(value).map_err(|_| Failure::new(VerdictStatus::InvalidArgument, "result contains a NUL byte"))?;
    write_out(out, c.into_raw(), "out")
}

fn fail<E: std::fmt::Display>(status: VerdictStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure::new(status, e.to_string())
}

/// Message for the most recent failed call on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn verdict_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn verdict_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build the consensus matrix for `k` models.
///
/// `nll` is `k * k` row-major: `nll[j * k + i]` is the mean answer NLL of
/// candidate `i` under scorer `j`. `valid[i]` is nonzero when model `i`
/// produced an answer; entries touching invalid candidates are ignored.
///
/// # Safety
/// `nll` must point to `k * k` doubles and `valid` to `k` bytes.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_new(
    k: usize,
    nll: *const f64,
    valid: *const u8,
    out: *mut *mut VerdictConsensus,
) -> VerdictStatus {
    guard(|| {
        non_null(nll, "nll")?;
        non_null(valid, "valid")?;
        non_null(out, "out")?;
        if k == 0 || k > 1024 {
            return Err(Failure::new(
                VerdictStatus::InvalidArgument,
                format!("k = {k} is out of range"),
            ));
        }
        let nll = std::slice::from_raw_parts(nll, k * k);
        let valid: Vec<bool> = std::slice::from_raw_parts(valid, k).iter().map(|v| *v != 0).collect();
        let candidates: Vec<CandidateAnswer> = (0..k)
            .map(|i| {
                if valid[i] {
                    CandidateAnswer::new(i, String::new(), Some(i.to_string()))
                } else {
                    CandidateAnswer::invalid(i)
                }
            })
            .collect();
        let mut scores = Vec::with_capacity(k * k);
        for j in (0..k).filter(|&j| valid[j]) {
            for i in (0..k).filter(|&i| valid[i]) {
                let v = nll[j * k + i];
                if !v.is_finite() || v < 0.0 {
                    return Err(Failure::new(
                        VerdictStatus::InvalidArgument,
                        format!("nll[{j}][{i}] = {v} is not a finite non-negative number"),
                    ));
                }
                scores.push(NllScore {
                    scorer_index: j,
                    candidate_index: i,
                    mean_nll: v,
                    token_count: 1,
                });
            }
        }
        let matrix = consensus::build_matrix(&scores, &candidates).map_err(fail(VerdictStatus::Consensus))?;
        write_out(out, Box::into_raw(Box::new(VerdictConsensus { matrix })), "out")
    })
}

/// Number of models in the matrix, 0 for NULL.
///
/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_k(c: *const VerdictConsensus) -> usize {
    guard_value(0, || Ok(handle(c, "consensus")?.matrix.k))
}

/// Copy the `k * k` row-major relative scores (`[j * k + i]` = scorer j on
/// candidate i) into `out`. Invalid candidates read as +infinity.
///
/// # Safety
/// `out` must have room for `k * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_relative(c: *const VerdictConsensus, out: *mut f64) -> VerdictStatus {
    guard(|| {
        let m = &handle(c, "consensus")?.matrix;
        non_null(out, "out")?;
        let dst = std::slice::from_raw_parts_mut(out, m.k * m.k);
        for (row, chunk) in m.relative.iter().zip(dst.chunks_mut(m.k)) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Copy the `k` global consensus scores into `out`; lower means more agreed upon.
///
/// # Safety
/// `out` must have room for `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_global_scores(c: *const VerdictConsensus, out: *mut f64) -> VerdictStatus {
    guard(|| {
        let m = &handle(c, "consensus")?.matrix;
        non_null(out, "out")?;
        let scores = consensus::global_scores(m);
        std::slice::from_raw_parts_mut(out, m.k).copy_from_slice(&scores);
        Ok(())
    })
}

/// Select up to `m` experts. `strategy` is a `VerdictStrategy` value;
/// `reference` is the fixed model for best-reference, or -1.
/// Writes the chosen indices to `chosen` (room for `m`) and their count to `len`.
///
/// # Safety
/// `chosen` must have room for `m` entries.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_select(
    c: *const VerdictConsensus,
    strategy: u32,
    m: usize,
    reference: i64,
    chosen: *mut usize,
    len: *mut usize,
) -> VerdictStatus {
    guard(|| {
        let matrix = &handle(c, "consensus")?.matrix;
        non_null(chosen, "chosen")?;
        non_null(len, "len")?;
        let strategy = match strategy {
            0 => SelectionStrategy::CrossAll,
            1 => SelectionStrategy::BestReference,
            2 => SelectionStrategy::Divergent,
            other => {
                return Err(Failure::new(
                    VerdictStatus::InvalidArgument,
                    format!("unknown strategy {other}"),
                ))
            }
        };
        let reference = usize::try_from(reference).ok();
        let sel = consensus::select_experts(matrix, strategy, m, reference).map_err(fail(VerdictStatus::Consensus))?;
        std::slice::from_raw_parts_mut(chosen, sel.chosen.len()).copy_from_slice(&sel.chosen);
        len.write(sel.chosen.len());
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from `verdict_consensus_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn verdict_consensus_free(c: *mut VerdictConsensus) {
    if !c.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(c))));
    }
}

/// Extract the marked final answer from model output. Returns `NoAnswer`
/// when there is none.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn verdict_extract_answer(
    text: *const c_char,
    format: u32,
    out: *mut *mut c_char,
) -> VerdictStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let format = match format {
            0 => AnswerFormat::Boxed,
            1 => AnswerFormat::Tagged,
            2 => AnswerFormat::Letter,
            other => {
                return Err(Failure::new(
                    VerdictStatus::InvalidArgument,
                    format!("unknown answer format {other}"),
                ))
            }
        };
        match extract_answer(text, format) {
            Some(a) => write_string(out, a),
            None => Err(Failure::new(VerdictStatus::NoAnswer, "no answer marker found")),
        }
    })
}

/// Normalized comparison form of an answer.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn verdict_normalize_answer(text: *const c_char, out: *mut *mut c_char) -> VerdictStatus {
    guard(|| write_string(out, normalize_answer(str_arg(text, "text")?)))
}

/// Character-level edit distance.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn verdict_levenshtein(a: *const c_char, b: *const c_char, out: *mut usize) -> VerdictStatus {
    guard(|| write_out(out, levenshtein(str_arg(a, "a")?, str_arg(b, "b")?), "out"))
}

/// ANLS of `pred` against `n_golds` gold answers.
///
/// # Safety
/// `golds` must point to `n_golds` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn verdict_anls(
    pred: *const c_char,
    golds: *const *const c_char,
    n_golds: usize,
    threshold: f64,
    out: *mut f64,
) -> VerdictStatus {
    guard(|| {
        let pred = str_arg(pred, "pred")?;
        non_null(golds, "golds")?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Failure::new(
                VerdictStatus::InvalidArgument,
                format!("threshold {threshold} outside [0, 1]"),
            ));
        }
        let golds = std::slice::from_raw_parts(golds, n_golds)
            .iter()
            .map(|g| str_arg(*g, "gold").map(str::to_owned))
            .collect::<FfiResult<Vec<_>>>()?;
        write_out(out, anls(pred, &golds, threshold), "out")
    })
}

/// Numeric match within a relative tolerance, exact match otherwise.
///
/// # Safety
/// `pred` and `gold` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn verdict_relaxed_accuracy(
    pred: *const c_char,
    gold: *const c_char,
    rel_tol: f64,
    out: *mut bool,
) -> VerdictStatus {
    guard(|| {
        write_out(
            out,
            relaxed_accuracy(str_arg(pred, "pred")?, str_arg(gold, "gold")?, rel_tol),
            "out",
        )
    })
}

/// Option-letter match.
///
/// # Safety
/// `pred` and `gold` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn verdict_letter_match(
    pred: *const c_char,
    gold: *const c_char,
    out: *mut bool,
) -> VerdictStatus {
    guard(|| write_out(out, letter_match(str_arg(pred, "pred")?, str_arg(gold, "gold")?), "out"))
}

/// USD cost of one call, rounded to six decimals.
#[no_mangle]
pub extern "C" fn verdict_estimate_cost(
    input_tokens: u64,
    output_tokens: u64,
    usd_per_million_input: f64,
    usd_per_million_output: f64,
) -> f64 {
    guard_value(f64::NAN, || {
        Ok(round_usd(estimate_cost(
            TokenUsage::new(input_tokens, output_tokens),
            Pricing {
                input_per_million: usd_per_million_input,
                output_per_million: usd_per_million_output,
            },
        )))
    })
}

/// Load and validate a TOML run configuration.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn verdict_runner_new(config_path: *const c_char, out: *mut *mut VerdictRunner) -> VerdictStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        non_null(out, "out")?;
        let config = RunConfig::load(Path::new(path)).map_err(fail(VerdictStatus::Config))?;
        config.validate().map_err(fail(VerdictStatus::Config))?;
        write_out(out, Box::into_raw(Box::new(VerdictRunner { config })), "out")
    })
}

/// Point every model of the configuration at `base_url`.
///
/// # Safety
/// `r` must be a live runner; `base_url` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn verdict_runner_set_base_url(r: *mut VerdictRunner, base_url: *const c_char) -> VerdictStatus {
    guard(|| {
        non_null(r, "runner")?;
        let url = str_arg(base_url, "base_url")?;
        let config = &mut (*r).config;
        for spec in config.pool.iter_mut().chain(std::iter::once(&mut config.verdict)) {
            spec.base_url = url.to_owned();
        }
        Ok(())
    })
}

/// Run every unfinished sample of `manifest_path` into `out_dir` and return
/// the run summary as JSON. With `resume` set, samples already recorded in
/// `out_dir` are skipped; otherwise the directory must be fresh.
///
/// # Safety
/// `r` must be a live runner; paths NUL-terminated; `summary_json` receives a string to free.
#[no_mangle]
pub unsafe extern "C" fn verdict_runner_run(
    r: *const VerdictRunner,
    manifest_path: *const c_char,
    out_dir: *const c_char,
    resume: bool,
    summary_json: *mut *mut c_char,
) -> VerdictStatus {
    guard(|| {
        let runner = handle(r, "runner")?;
        let manifest_path = str_arg(manifest_path, "manifest_path")?;
        let out_dir = str_arg(out_dir, "out_dir")?;
        non_null(summary_json, "summary_json")?;
        let config = runner.config.clone();
        let manifest = ingest_manifest(Path::new(manifest_path), config.benchmark).map_err(fail(VerdictStatus::Io))?;
        let store = RunStore::open(Path::new(out_dir), resume).map_err(fail(VerdictStatus::Io))?;
        let run = runtime()
            .block_on(run_batch(
                &manifest,
                Arc::new(config),
                Arc::new(store),
                BatchOptions::default(),
            ))
            .map_err(fail(VerdictStatus::Run))?;
        let summary = run
            .summary
            .ok_or_else(|| Failure::new(VerdictStatus::Run, "run stopped before completion"))?;
        let json = serde_json::to_string(&summary).map_err(fail(VerdictStatus::Run))?;
        write_string(summary_json, json)
    })
}

/// # Safety
/// `r` must be NULL or a handle from `verdict_runner_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn verdict_runner_free(r: *mut VerdictRunner) {
    if !r.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(r))));
    }
}

/// Serve a JSON scenario on 127.0.0.1:`port` (0 picks a free port).
///
/// # Safety
/// `scenario_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn verdict_mock_start(
    scenario_path: *const c_char,
    port: u16,
    out: *mut *mut VerdictMock,
) -> VerdictStatus {
    guard(|| {
        let path = str_arg(scenario_path, "scenario_path")?;
        non_null(out, "out")?;
        let scenario = Scenario::load(Path::new(path)).map_err(fail(VerdictStatus::Config))?;
        let server = runtime()
            .block_on(serve_mock(scenario, port))
            .map_err(fail(VerdictStatus::Io))?;
        write_out(out, Box::into_raw(Box::new(VerdictMock { server })), "out")
    })
}

/// Bound port, 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live mock handle.
#[no_mangle]
pub unsafe extern "C" fn verdict_mock_port(m: *const VerdictMock) -> u16 {
    guard_value(0, || Ok(handle(m, "mock")?.server.port()))
}

/// Requests received so far, failures and unmatched ones included.
///
/// # Safety
/// `m` must be NULL or a live mock handle.
#[no_mangle]
pub unsafe extern "C" fn verdict_mock_request_count(m: *const VerdictMock) -> u64 {
    guard_value(0, || Ok(handle(m, "mock")?.server.request_count()))
}

/// Stop the server and release the handle.
///
/// # Safety
/// `m` must be NULL or a handle from `verdict_mock_start`, stopped once.
#[no_mangle]
pub unsafe extern "C" fn verdict_mock_stop(m: *mut VerdictMock) {
    if !m.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| {
            let mock = Box::from_raw(m);
            runtime().block_on(mock.server.shutdown());
        }));
    }
}
