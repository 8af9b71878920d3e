//! C ABI over the deterministic parts of covergap: diff parsing, patch
//! coverage, annotation, path similarity and the feedback state machine.
//!
//! Conventions:
//! - Every fallible call returns a [`CgStatus`]; on failure a message is
//!   available from [`cg_last_error_message`] on the same thread.
//! - Objects are opaque handles released with their `*_free` function.
//! - Strings returned through `char **out` are owned by the caller and
//!   released with [`cg_string_free`].
//! - Panics never cross the boundary; they are reported as
//!   [`CgStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use covergap::change::{parse_unified_diff, DiffModel};
use covergap::coverage::{annotate_uncovered, compute_patch_coverage, CoverageReport, PatchCoverage};
use covergap::generation::{next_state, FeedbackState};
use covergap::test_context::jaccard;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    DiffError = 3,
    SchemaError = 4,
    CoverageError = 5,
    LineOutOfRange = 6,
    SerializeError = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgFeedbackState {
    Accept = 0,
    FixError = 1,
    FixPreserveCoverage = 2,
    IncreaseCoverage = 3,
    Exhausted = 4,
}

impl From<FeedbackState> for CgFeedbackState {
    fn from(s: FeedbackState) -> Self {
        match s {
            FeedbackState::Accept => CgFeedbackState::Accept,
            FeedbackState::FixError => CgFeedbackState::FixError,
            FeedbackState::FixPreserveCoverage => CgFeedbackState::FixPreserveCoverage,
            FeedbackState::IncreaseCoverage => CgFeedbackState::IncreaseCoverage,
            FeedbackState::Exhausted => CgFeedbackState::Exhausted,
        }
    }
}

/// Parsed unified diff.
pub struct CgDiff(DiffModel);

/// Normalized coverage report.
pub struct CgCoverage(CoverageReport);

/// Patch coverage of a diff against a coverage report.
pub struct CgPatchCoverage(PatchCoverage);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Fallible<T> = Result<T, (CgStatus, String)>;

/// Run `f`, store its error message, and turn panics into `Panic`.
fn guard(f: impl FnOnce() -> Fallible<()>) -> CgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CgStatus::Ok,
        Ok(Err((status, msg))) => {
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
            CgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Fallible<&'a str> {
    if p.is_null() {
        return Err((CgStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (CgStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Fallible<&'a T> {
    p.as_ref().ok_or((CgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Fallible<&'a mut T> {
    p.as_mut().ok_or((CgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn lines_arg(p: *const u32, n: usize, name: &str) -> Fallible<BTreeSet<u32>> {
    if n == 0 {
        return Ok(BTreeSet::new());
    }
    if p.is_null() {
        return Err((CgStatus::NullArgument, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n).iter().copied().collect())
}

fn owned_c_string(s: String) -> Fallible<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| (CgStatus::SerializeError, e.to_string()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next covergap call on the same thread.
#[no_mangle]
pub extern "C" fn cg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a unified diff.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_diff_parse(text: *const c_char, out: *mut *mut CgDiff) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let model = parse_unified_diff(text).map_err(|e| (CgStatus::DiffError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CgDiff(model)));
        Ok(())
    })
}

/// # Safety
/// `diff` must come from [`cg_diff_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_diff_free(diff: *mut CgDiff) {
    if !diff.is_null() {
        drop(Box::from_raw(diff));
    }
}

/// Number of files in the diff; 0 for null.
///
/// # Safety
/// `diff` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_diff_file_count(diff: *const CgDiff) -> usize {
    diff.as_ref().map_or(0, |d| d.0.files.len())
}

/// Parse a coverage report (JSON with `schema_version`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_coverage_parse(json: *const c_char, out: *mut *mut CgCoverage) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let json = str_arg(json, "json")?;
        let report = CoverageReport::from_json(json).map_err(|e| (CgStatus::SchemaError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CgCoverage(report)));
        Ok(())
    })
}

/// # Safety
/// `cov` must come from [`cg_coverage_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_coverage_free(cov: *mut CgCoverage) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Patch coverage of `diff` against `cov`.
///
/// # Safety
/// `diff` and `cov` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_compute(
    diff: *const CgDiff,
    cov: *const CgCoverage,
    out: *mut *mut CgPatchCoverage,
) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let diff = ref_arg(diff, "diff")?;
        let cov = ref_arg(cov, "cov")?;
        let pc = compute_patch_coverage(&diff.0, &cov.0).map_err(|e| (CgStatus::CoverageError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CgPatchCoverage(pc)));
        Ok(())
    })
}

/// # Safety
/// `pc` must come from [`cg_patch_coverage_compute`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_free(pc: *mut CgPatchCoverage) {
    if !pc.is_null() {
        drop(Box::from_raw(pc));
    }
}

/// |C| / |E|, or 1.0 when no executable line changed. NaN for null.
///
/// # Safety
/// `pc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_ratio(pc: *const CgPatchCoverage) -> f64 {
    pc.as_ref().map_or(f64::NAN, |p| p.0.ratio())
}

/// Number of changed executable lines; 0 for null.
///
/// # Safety
/// `pc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_executable_count(pc: *const CgPatchCoverage) -> usize {
    pc.as_ref().map_or(0, |p| p.0.executable.len())
}

/// Number of changed lines the suite covers; 0 for null.
///
/// # Safety
/// `pc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_covered_count(pc: *const CgPatchCoverage) -> usize {
    pc.as_ref().map_or(0, |p| p.0.covered.len())
}

/// Number of changed lines the suite misses; 0 for null.
///
/// # Safety
/// `pc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_uncovered_count(pc: *const CgPatchCoverage) -> usize {
    pc.as_ref().map_or(0, |p| p.0.uncovered.len())
}

/// The full line sets as JSON. Free the result with [`cg_string_free`].
///
/// # Safety
/// `pc` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_patch_coverage_to_json(pc: *const CgPatchCoverage, out: *mut *mut c_char) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let pc = ref_arg(pc, "pc")?;
        let json = serde_json::to_string(&pc.0).map_err(|e| (CgStatus::SerializeError, e.to_string()))?;
        *out = owned_c_string(json)?;
        Ok(())
    })
}

/// Mark `uncovered` lines and partially covered `branches` (1-based) with
/// trailing comments. Free the result with [`cg_string_free`].
///
/// # Safety
/// `source` must be a NUL-terminated string; each array must hold at least
/// its count of elements (or be null when the count is 0); `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cg_annotate_uncovered(
    source: *const c_char,
    uncovered: *const u32,
    n_uncovered: usize,
    branches: *const u32,
    n_branches: usize,
    out: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let source = str_arg(source, "source")?;
        let unc = lines_arg(uncovered, n_uncovered, "uncovered")?;
        let br = lines_arg(branches, n_branches, "branches")?;
        let text = annotate_uncovered(source, &unc, &br).map_err(|e| (CgStatus::LineOutOfRange, e.to_string()))?;
        *out = owned_c_string(text)?;
        Ok(())
    })
}

/// Jaccard similarity of the path tokens of `a` and `b` as an exact
/// fraction `num / den`.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; `num` and `den` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_jaccard_score(
    a: *const c_char,
    b: *const c_char,
    num: *mut usize,
    den: *mut usize,
) -> CgStatus {
    guard(|| {
        let num = out_arg(num, "num")?;
        let den = out_arg(den, "den")?;
        let r = jaccard(str_arg(a, "a")?, str_arg(b, "b")?);
        *num = r.num;
        *den = r.den;
        Ok(())
    })
}

/// Next state of the feedback loop after one test run.
#[no_mangle]
pub extern "C" fn cg_next_state(passed: bool, added_any: bool, round: u32, max_rounds: u32) -> CgFeedbackState {
    next_state(passed, added_any, round, max_rounds).into()
}
