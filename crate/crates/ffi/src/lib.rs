//! C ABI over `bench-core`.
//!
//! Conventions:
//! - Every fallible function returns a [`BenchStatus`]; on failure
//!   [`bench_last_error`] describes it (per thread).
//! - Structured values cross the boundary as UTF-8 JSON in the same shapes
//!   the HTTP API uses.
//! - Objects are opaque handles released with their `_free` function.
//!   Strings from `out` parameters are released with [`bench_string_free`],
//!   byte buffers with [`bench_bytes_free`].
//! - Panics never unwind into C; they surface as `BENCH_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bench_core::harness::{perturb_case, PredictionRecord};
use bench_core::leaderboard::{classify, render_table, Grade, Leaderboard, ViewFilter};
use bench_core::metrics::{
    gold_map, reproducibility_agreement, robustness_ratio, subgroup_disparity, EvaluationReport, MetricBlock,
};
use bench_core::registry::{export_public, split_dataset, Case, Dataset, LabeledCase, SplitManifest};
use bench_core::rng::{fnv1a64_bytes, splitmix64};
use bench_core::task::{GradeThresholds, PerturbationPolicy, TaskDescriptor};
use bench_core::{Error, Fraction};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchStatus {
    Ok = 0,
    NullArgument,
    InvalidUtf8,
    InvalidJson,
    Invalid,
    DuplicateCaseId,
    UnknownLabel,
    EmptyDataset,
    FractionOutOfRange,
    ManifestMismatch,
    Unauthorized,
    ModelNotFound,
    NotEligible,
    DuplicateSubmission,
    SpawnFailed,
    MissingGold,
    RunMismatch,
    TaskMismatch,
    UnknownTask,
    NotFound,
    CorruptLog,
    Io,
    Panic,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchGrade {
    Fail = 0,
    DecisionSupport = 1,
    Autonomous = 2,
}

/// A registered dataset.
pub struct BenchDataset(Dataset);
/// A split manifest.
pub struct BenchSplit(SplitManifest);
/// One task's leaderboard.
pub struct BenchLeaderboard(Leaderboard);

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

fn status_of(e: &Error) -> BenchStatus {
    match e {
        Error::DuplicateCaseId(_) => BenchStatus::DuplicateCaseId,
        Error::UnknownLabel { .. } => BenchStatus::UnknownLabel,
        Error::EmptyDataset => BenchStatus::EmptyDataset,
        Error::FractionOutOfRange(_) => BenchStatus::FractionOutOfRange,
        Error::ManifestMismatch(_) => BenchStatus::ManifestMismatch,
        Error::Unauthorized(_) => BenchStatus::Unauthorized,
        Error::ModelNotFound(_) => BenchStatus::ModelNotFound,
        Error::NotEligible(_) => BenchStatus::NotEligible,
        Error::DuplicateSubmission(_) => BenchStatus::DuplicateSubmission,
        Error::SpawnFailed(_) => BenchStatus::SpawnFailed,
        Error::MissingGold(_) => BenchStatus::MissingGold,
        Error::RunMismatch(_) => BenchStatus::RunMismatch,
        Error::TaskMismatch { .. } => BenchStatus::TaskMismatch,
        Error::UnknownTask(_) => BenchStatus::UnknownTask,
        Error::NotFound { .. } => BenchStatus::NotFound,
        Error::CorruptLog(_) => BenchStatus::CorruptLog,
        Error::Invalid(_) => BenchStatus::Invalid,
        Error::Io(_) => BenchStatus::Io,
        Error::Json(_) => BenchStatus::InvalidJson,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BenchStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BenchStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            BenchStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_last_error(format!("not UTF-8: {what}"));
            BenchStatus::InvalidUtf8
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(format!("{}: {e}", e.code()));
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            BenchStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn json<T: serde::de::DeserializeOwned>(p: *const c_char, what: &'static str) -> Result<T, Failure> {
    Ok(serde_json::from_str(text(p, what)?)?)
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let c = CString::new(s).map_err(|_| Failure::Utf8("output"))?;
    out.write(c.into_raw());
    Ok(())
}

unsafe fn put_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    put_string(out, bench_core::canonical::to_string(value)?)
}

fn fraction(num: i64, den: i64) -> Result<Fraction, Failure> {
    Ok(Fraction::try_new(num, den)?)
}

fn parse_cases_jsonl(text: &str) -> Result<Vec<LabeledCase>, Failure> {
    let mut cases = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        cases.push(serde_json::from_str(line)?);
    }
    Ok(cases)
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn bench_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn bench_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bench_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `data`/`len` must be NULL or a buffer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bench_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

#[no_mangle]
pub extern "C" fn bench_splitmix64(seed: u64) -> u64 {
    splitmix64(seed)
}

/// # Safety
/// `data` must point to `len` readable bytes (or be NULL with `len` 0).
#[no_mangle]
pub unsafe extern "C" fn bench_fnv1a64(data: *const u8, len: usize) -> u64 {
    let bytes = if data.is_null() { &[][..] } else { std::slice::from_raw_parts(data, len) };
    fnv1a64_bytes(bytes)
}

/// Builds a dataset from a task descriptor (JSON) and cases (JSON lines).
///
/// # Safety
/// Pointers must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bench_dataset_new(
    task_json: *const c_char,
    cases_jsonl: *const c_char,
    out: *mut *mut BenchDataset,
) -> BenchStatus {
    guard(|| {
        let task: TaskDescriptor = json(task_json, "task_json")?;
        let cases = parse_cases_jsonl(text(cases_jsonl, "cases_jsonl")?)?;
        let ds = Dataset::build(task, cases, None)?;
        put(out, Box::into_raw(Box::new(BenchDataset(ds))), "out")
    })
}

/// `{"dataset_id", "content_digest", "n_cases", "task_id"}`.
///
/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_dataset_info(ds: *const BenchDataset, out: *mut *mut c_char) -> BenchStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let info = serde_json::json!({
            "dataset_id": ds.dataset_id,
            "content_digest": ds.content_digest,
            "n_cases": ds.cases.len(),
            "task_id": ds.task.task_id,
        });
        put_json(out, &info)
    })
}

/// # Safety
/// `ds` must be NULL or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn bench_dataset_free(ds: *mut BenchDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Stratified split with test fraction `num/den`.
///
/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_split_new(
    ds: *const BenchDataset,
    seed: u64,
    num: i64,
    den: i64,
    out: *mut *mut BenchSplit,
) -> BenchStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let m = split_dataset(ds, seed, fraction(num, den)?)?;
        put(out, Box::into_raw(Box::new(BenchSplit(m))), "out")
    })
}

/// The manifest as canonical JSON.
///
/// # Safety
/// `split` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_split_json(split: *const BenchSplit, out: *mut *mut c_char) -> BenchStatus {
    guard(|| put_json(out, &handle(split, "split")?.0))
}

/// # Safety
/// `split` must be NULL or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn bench_split_free(split: *mut BenchSplit) {
    if !split.is_null() {
        drop(Box::from_raw(split));
    }
}

/// Public archive (tar) of the split's train side.
///
/// # Safety
/// Handles must be live; `out_data` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_export_public(
    ds: *const BenchDataset,
    split: *const BenchSplit,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> BenchStatus {
    guard(|| {
        let archive = export_public(&handle(ds, "dataset")?.0, &handle(split, "split")?.0, None)?;
        if out_data.is_null() || out_len.is_null() {
            return Err(Failure::Null("out"));
        }
        let boxed = archive.bytes.into_boxed_slice();
        out_len.write(boxed.len());
        out_data.write(Box::into_raw(boxed).cast());
        Ok(())
    })
}

/// Metric block for predictions (JSON array of prediction records) against
/// labeled cases (JSON array), at depth `k`.
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_metrics(
    predictions_json: *const c_char,
    cases_json: *const c_char,
    k: u32,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let preds: Vec<PredictionRecord> = json(predictions_json, "predictions_json")?;
        let cases: Vec<LabeledCase> = json(cases_json, "cases_json")?;
        let block = MetricBlock::compute(&preds, &gold_map(&cases), k as usize)?;
        put_json(out, &block)
    })
}

/// Top-1 disparity across the values of subgroup `key`, as a fraction object.
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_subgroup_disparity(
    predictions_json: *const c_char,
    cases_json: *const c_char,
    key: *const c_char,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let preds: Vec<PredictionRecord> = json(predictions_json, "predictions_json")?;
        let cases: Vec<LabeledCase> = json(cases_json, "cases_json")?;
        let plain: Vec<Case> = cases.iter().map(|c| c.case.clone()).collect();
        let d = subgroup_disparity(&preds, &gold_map(&cases), &plain, text(key, "key")?)?;
        put_json(out, &d)
    })
}

/// Robustness ratio of two metric blocks (JSON).
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_robustness_ratio(
    clean_json: *const c_char,
    perturbed_json: *const c_char,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let clean: MetricBlock = json(clean_json, "clean_json")?;
        let perturbed: MetricBlock = json(perturbed_json, "perturbed_json")?;
        put_json(out, &robustness_ratio(&clean, &perturbed))
    })
}

/// Agreement between two run results (JSON).
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_reproducibility(
    run_a_json: *const c_char,
    run_b_json: *const c_char,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let a = json(run_a_json, "run_a_json")?;
        let b = json(run_b_json, "run_b_json")?;
        put_json(out, &reproducibility_agreement(&a, &b)?)
    })
}

/// Perturbs one case (JSON) with relative magnitude `magnitude`.
///
/// # Safety
/// `case_json` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_perturb_case(
    case_json: *const c_char,
    magnitude: f64,
    run_seed: u64,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let case: Case = json(case_json, "case_json")?;
        let policy = PerturbationPolicy { magnitude };
        put_json(out, &perturb_case(&case, &policy, run_seed))
    })
}

/// Grade of a report (JSON) under thresholds (JSON).
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_classify(
    report_json: *const c_char,
    thresholds_json: *const c_char,
    out: *mut BenchGrade,
) -> BenchStatus {
    guard(|| {
        let report: EvaluationReport = json(report_json, "report_json")?;
        let thresholds: GradeThresholds = json(thresholds_json, "thresholds_json")?;
        let grade = match classify(&report, &thresholds) {
            Grade::Fail => BenchGrade::Fail,
            Grade::DecisionSupport => BenchGrade::DecisionSupport,
            Grade::Autonomous => BenchGrade::Autonomous,
        };
        put(out, grade, "out")
    })
}

/// Empty leaderboard for a task (JSON descriptor).
///
/// # Safety
/// `task_json` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_new(task_json: *const c_char, out: *mut *mut BenchLeaderboard) -> BenchStatus {
    guard(|| {
        let task: TaskDescriptor = json(task_json, "task_json")?;
        task.validate()?;
        put(out, Box::into_raw(Box::new(BenchLeaderboard(Leaderboard::new(task)))), "out")
    })
}

/// Inserts a digest-stamped report; idempotent per digest.
///
/// # Safety
/// `lb` must be a live handle; `report_json` valid.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_insert(
    lb: *mut BenchLeaderboard,
    report_json: *const c_char,
    baseline: bool,
) -> BenchStatus {
    guard(|| {
        let lb = &mut handle_mut(lb, "leaderboard")?.0;
        let report: EvaluationReport = json(report_json, "report_json")?;
        report.verify_digest()?;
        if baseline {
            lb.set_baseline(&report)?;
        } else {
            lb.insert(&report)?;
        }
        Ok(())
    })
}

/// Adds the human gold-standard pseudo-entry with rate `num/den`, created
/// at `created_at` (RFC 3339).
///
/// # Safety
/// `lb` must be a live handle; `created_at` a valid string.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_set_human_rate(
    lb: *mut BenchLeaderboard,
    num: i64,
    den: i64,
    created_at: *const c_char,
) -> BenchStatus {
    guard(|| {
        let lb = &mut handle_mut(lb, "leaderboard")?.0;
        let at = serde_json::from_value(serde_json::Value::String(text(created_at, "created_at")?.to_string()))?;
        lb.set_human_baseline(fraction(num, den)?, at)?;
        Ok(())
    })
}

/// Entries in rank order as a JSON array. `filter_json` may be NULL.
///
/// # Safety
/// `lb` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_entries(
    lb: *const BenchLeaderboard,
    filter_json: *const c_char,
    out: *mut *mut c_char,
) -> BenchStatus {
    guard(|| {
        let lb = &handle(lb, "leaderboard")?.0;
        let filter: ViewFilter = if filter_json.is_null() { ViewFilter::default() } else { json(filter_json, "filter_json")? };
        put_json(out, &lb.view(&filter))
    })
}

/// Plain-text rendering of the full view.
///
/// # Safety
/// `lb` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_render(lb: *const BenchLeaderboard, out: *mut *mut c_char) -> BenchStatus {
    guard(|| {
        let lb = &handle(lb, "leaderboard")?.0;
        put_string(out, render_table(&lb.task.task_id, &lb.view(&ViewFilter::default())))
    })
}

/// # Safety
/// `lb` must be NULL or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn bench_leaderboard_free(lb: *mut BenchLeaderboard) {
    if !lb.is_null() {
        drop(Box::from_raw(lb));
    }
}
