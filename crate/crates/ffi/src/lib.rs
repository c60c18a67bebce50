//! C interface to the active learning simulator.
//!
//! Every fallible function returns a [`DalStatus`]. On failure the message is
//! available from [`dal_last_error`] on the same thread until the next call.
//! Handles are opaque and released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dal_core::acquisition::{self, AcquisitionScore, BudgetSpec, BudgetUnit};
use dal_core::cli::{cmd_run, RunManifest, SummaryDocument};
use dal_core::config::RunConfig;
use dal_core::metrics;
use dal_core::{DalError, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Incompatible = 4,
    Parse = 5,
    Config = 6,
    Io = 7,
    Incomplete = 8,
    Internal = 9,
    Panic = 10,
}

/// Span-level precision, recall and F1.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalSpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A loaded run configuration.
pub struct DalConfig {
    inner: RunConfig,
}

/// The outcome of one configured run: one entry per matrix cell.
pub struct DalRun {
    manifest: RunManifest,
    summary: SummaryDocument,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &DalError) -> DalStatus {
    match err {
        DalError::Shape(_) => DalStatus::Shape,
        DalError::InvalidArgument(_) => DalStatus::InvalidArgument,
        DalError::Incompatible(_) => DalStatus::Incompatible,
        DalError::Parse { .. } => DalStatus::Parse,
        DalError::Config { .. } => DalStatus::Config,
        DalError::Io { .. } => DalStatus::Io,
        DalError::NonDeterministic(_) | DalError::Serde(_) => DalStatus::Internal,
    }
}

struct Failure(DalStatus, String);

impl From<DalError> for Failure {
    fn from(e: DalError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DalStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DalStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DalStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DalStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(DalStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn rows(probs: &[f64], lengths: &[usize], classes: usize) -> Result<Vec<Tensor>, Failure> {
    let mut out = Vec::with_capacity(lengths.len());
    let mut at = 0;
    for &len in lengths {
        let end = at + len * classes;
        let chunk = probs.get(at..end).ok_or_else(|| Failure(DalStatus::Shape, "probabilities shorter than the declared lengths".into()))?;
        out.push(Tensor::matrix(len, classes, chunk.to_vec())?);
        at = end;
    }
    if at != probs.len() {
        return Err(Failure(DalStatus::Shape, "probabilities longer than the declared lengths".into()));
    }
    Ok(out)
}

fn write_scores(scores: &[AcquisitionScore], out: &mut [f64]) {
    for s in scores {
        out[s.id] = s.score;
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a TOML configuration or a `manifest.json` from a previous run.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dal_config_load(path: *const c_char, out: *mut *mut DalConfig) -> DalStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = RunConfig::load(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(DalConfig { inner }));
        Ok(())
    })
}

/// Parses a TOML configuration held in memory. Relative paths stay relative
/// to the working directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dal_config_parse(toml: *const c_char, out: *mut *mut DalConfig) -> DalStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = RunConfig::parse(text(toml, "toml")?, "<memory>")?;
        *out = Box::into_raw(Box::new(DalConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from `dal_config_load`/`dal_config_parse` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dal_config_free(config: *mut DalConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs every configured cell and writes CSV, summaries and the manifest to
/// `out_dir`. `workers == 0` uses one worker per core. The handle is
/// returned even when some seeds failed; check `dal_run_is_complete`.
///
/// # Safety
/// `config` must be a live handle, `out_dir` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dal_run(config: *const DalConfig, out_dir: *const c_char, workers: usize, out: *mut *mut DalRun) -> DalStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let dir = Path::new(text(out_dir, "out_dir")?);
        let manifest = cmd_run(&config.inner, dir, (workers > 0).then_some(workers))?;
        let summary = SummaryDocument::load(&manifest.summary)?;
        let names = summary.runs.iter().map(|r| CString::new(r.name.replace('\0', " ")).expect("no interior NUL")).collect();
        *out = Box::into_raw(Box::new(DalRun { manifest, summary, names }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from `dal_run` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dal_run_free(run: *mut DalRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dal_run_is_complete(run: *const DalRun, out: *mut bool) -> DalStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        *out_ref(out, "out")? = run.manifest.complete;
        Ok(())
    })
}

/// Number of matrix cells in the run.
///
/// # Safety
/// `run` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dal_run_count(run: *const DalRun, out: *mut usize) -> DalStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        *out_ref(out, "out")? = run.summary.runs.len();
        Ok(())
    })
}

/// Name of cell `index`; the string lives as long as the handle.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dal_run_name(run: *const DalRun, index: usize) -> *const c_char {
    match run.as_ref().and_then(|r| r.names.get(index)) {
        Some(name) => name.as_ptr(),
        None => ptr::null(),
    }
}

/// Area under the mean learning curve of cell `index`. Returns
/// `DAL_STATUS_INCOMPLETE` when a seed of that cell failed.
///
/// # Safety
/// `run` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dal_run_auc(run: *const DalRun, index: usize, out: *mut f64) -> DalStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out_ref(out, "out")?;
        let cell = run.summary.runs.get(index).ok_or_else(|| Failure(DalStatus::InvalidArgument, format!("no cell {index}")))?;
        *out = cell.auc.ok_or_else(|| Failure(DalStatus::Incomplete, format!("cell `{}` did not complete", cell.name)))?;
        Ok(())
    })
}

/// Random scores for `n` examples: a seeded permutation of `0..n`.
///
/// # Safety
/// `scores` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dal_score_random(n: usize, seed: u64, scores: *mut f64) -> DalStatus {
    guard(|| {
        let out = output(scores, n, "scores")?;
        let ids: Vec<usize> = (0..n).collect();
        write_scores(&acquisition::score_random(&ids, seed), out);
        Ok(())
    })
}

/// Least-confidence scores. `probs` is row-major `n x classes`.
///
/// # Safety
/// `probs` must hold `n * classes` doubles and `scores` `n`.
#[no_mangle]
pub unsafe extern "C" fn dal_score_lc(probs: *const f64, n: usize, classes: usize, scores: *mut f64) -> DalStatus {
    guard(|| {
        let dists = rows(input(probs, n * classes, "probs")?, &vec![1; n], classes)?;
        let ids: Vec<usize> = (0..n).collect();
        write_scores(&acquisition::score_lc(&ids, &dists)?, output(scores, n, "scores")?);
        Ok(())
    })
}

/// Predictive-entropy scores. `probs` is row-major `n x classes`.
///
/// # Safety
/// `probs` must hold `n * classes` doubles and `scores` `n`.
#[no_mangle]
pub unsafe extern "C" fn dal_score_max_entropy(probs: *const f64, n: usize, classes: usize, scores: *mut f64) -> DalStatus {
    guard(|| {
        let dists = rows(input(probs, n * classes, "probs")?, &vec![1; n], classes)?;
        let ids: Vec<usize> = (0..n).collect();
        write_scores(&acquisition::score_max_entropy(&ids, &dists)?, output(scores, n, "scores")?);
        Ok(())
    })
}

/// MNLP scores for `n` sequences. `probs` holds the token rows of every
/// sequence back to back; sequence `i` has `lengths[i]` rows of `classes`.
///
/// # Safety
/// `lengths` and `scores` must hold `n` entries and `probs`
/// `sum(lengths) * classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn dal_score_mnlp(probs: *const f64, lengths: *const usize, n: usize, classes: usize, scores: *mut f64) -> DalStatus {
    guard(|| {
        let lengths = input(lengths, n, "lengths")?;
        let total: usize = lengths.iter().sum();
        let seqs = rows(input(probs, total * classes, "probs")?, lengths, classes)?;
        let ids: Vec<usize> = (0..n).collect();
        write_scores(&acquisition::score_mnlp(&ids, &seqs)?, output(scores, n, "scores")?);
        Ok(())
    })
}

/// BALD vote-disagreement scores and tie-breaks over `passes` stochastic
/// passes. Each pass uses the layout of `dal_score_mnlp`, and passes are
/// stored back to back. `lengths` may be NULL for classification, meaning one
/// row per example. `tiebreaks` may be NULL.
///
/// # Safety
/// Buffers must match the sizes above.
#[no_mangle]
pub unsafe extern "C" fn dal_score_bald(
    probs: *const f64,
    passes: usize,
    lengths: *const usize,
    n: usize,
    classes: usize,
    scores: *mut f64,
    tiebreaks: *mut f64,
) -> DalStatus {
    guard(|| {
        let ones = vec![1; n];
        let lengths = if lengths.is_null() { &ones[..] } else { input(lengths, n, "lengths")? };
        let per_pass: usize = lengths.iter().sum::<usize>() * classes;
        let all = input(probs, passes * per_pass, "probs")?;
        let ensemble = (0..passes).map(|t| rows(&all[t * per_pass..(t + 1) * per_pass], lengths, classes)).collect::<Result<Vec<_>, _>>()?;
        let ids: Vec<usize> = (0..n).collect();
        let result = acquisition::score_bald(&ids, &ensemble)?;
        write_scores(&result, output(scores, n, "scores")?);
        if !tiebreaks.is_null() {
            let tb = output(tiebreaks, n, "tiebreaks")?;
            for s in &result {
                tb[s.id] = s.tiebreak;
            }
        }
        Ok(())
    })
}

/// Greedy batch selection: examples in order of score descending, tie-break
/// ascending, index ascending, until the summed cost reaches `budget`
/// (the crossing example is included). `tiebreaks` may be NULL (all zero)
/// and `costs` may be NULL (all one). Selected indices go to `selected`,
/// which must hold `n` entries, and their count to `count`.
///
/// # Safety
/// Buffers must match the sizes above.
#[no_mangle]
pub unsafe extern "C" fn dal_select_batch(
    scores: *const f64,
    tiebreaks: *const f64,
    costs: *const usize,
    n: usize,
    budget: usize,
    selected: *mut usize,
    count: *mut usize,
) -> DalStatus {
    guard(|| {
        let count = out_ref(count, "count")?;
        *count = 0;
        let s = input(scores, n, "scores")?;
        let tb = if tiebreaks.is_null() { None } else { Some(input(tiebreaks, n, "tiebreaks")?) };
        let cost = if costs.is_null() { None } else { Some(input(costs, n, "costs")?) };
        if let Some(i) = cost.and_then(|c| c.iter().position(|&c| c == 0)) {
            return Err(Failure(DalStatus::InvalidArgument, format!("example {i}: cost must be positive")));
        }
        let items: Vec<AcquisitionScore> = (0..n)
            .map(|i| AcquisitionScore { id: i, score: s[i], tiebreak: tb.map_or(0.0, |t| t[i]), cost: cost.map_or(1, |c| c[i]) })
            .collect();
        let unit = if cost.is_some() { BudgetUnit::Words } else { BudgetUnit::Sentences };
        let picked = acquisition::select_batch(&items, BudgetSpec { unit, amount: budget })?;
        output(selected, n, "selected")?[..picked.len()].copy_from_slice(&picked);
        *count = picked.len();
        Ok(())
    })
}

fn sequences(corpus: &str) -> Vec<Vec<&str>> {
    corpus.lines().filter(|l| !l.trim().is_empty()).map(|l| l.split_whitespace().collect()).collect()
}

/// Exact-match span scores for BIO tag sequences. Each argument holds one
/// sentence per line with whitespace-separated tags; blank lines are ignored.
///
/// # Safety
/// Strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dal_span_f1(predicted: *const c_char, gold: *const c_char, out: *mut DalSpanScores) -> DalStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let s = metrics::span_f1(&sequences(text(predicted, "predicted")?), &sequences(text(gold, "gold")?))?;
        *out = DalSpanScores { precision: s.precision, recall: s.recall, f1: s.f1 };
        Ok(())
    })
}

/// Trapezoidal area under a learning curve, normalised by the fraction range.
///
/// # Safety
/// `fractions` and `values` must hold `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn dal_curve_auc(fractions: *const f64, values: *const f64, n: usize, out: *mut f64) -> DalStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let xs = input(fractions, n, "fractions")?;
        let ys = input(values, n, "values")?;
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        *out = metrics::curve_auc(&pts)?;
        Ok(())
    })
}
