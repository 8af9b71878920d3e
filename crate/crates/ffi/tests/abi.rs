use std::ffi::{c_char, CStr, CString};
use std::ptr;

use covergap::change::parse_unified_diff;
use covergap::coverage::{compute_patch_coverage, CoverageReport, PatchCoverage};
use covergap::generation::next_state;
use covergap_ffi::*;

const DIFF: &str = "diff --git a/pkg/m.py b/pkg/m.py\n--- a/pkg/m.py\n+++ b/pkg/m.py\n@@ -1,2 +1,5 @@\n def f(x):\n+    if x:\n+        return 1\n     return 0\n+# note\n";
const COVERAGE: &str = r#"{"schema_version": 1, "files": [{"path": "pkg/m.py", "executable_lines": [1, 2, 3, 4], "covered_lines": [1, 2, 4], "missed_branch_lines": [2]}]}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    cg_string_free(p);
    s
}

#[test]
fn patch_coverage_matches_the_core() {
    unsafe {
        let (mut diff, mut cov, mut pc) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(cg_diff_parse(c(DIFF).as_ptr(), &mut diff), CgStatus::Ok, "{}", last_error());
        assert_eq!(cg_diff_file_count(diff), 1);
        assert_eq!(cg_coverage_parse(c(COVERAGE).as_ptr(), &mut cov), CgStatus::Ok);
        assert_eq!(cg_patch_coverage_compute(diff, cov, &mut pc), CgStatus::Ok);

        let want = compute_patch_coverage(
            &parse_unified_diff(DIFF).unwrap(),
            &CoverageReport::from_json(COVERAGE).unwrap(),
        )
        .unwrap();
        assert_eq!(cg_patch_coverage_ratio(pc), want.ratio());
        assert_eq!(cg_patch_coverage_executable_count(pc), want.executable.len());
        assert_eq!(cg_patch_coverage_covered_count(pc), want.covered.len());
        assert_eq!(cg_patch_coverage_uncovered_count(pc), 1);

        let mut json = ptr::null_mut();
        assert_eq!(cg_patch_coverage_to_json(pc, &mut json), CgStatus::Ok);
        let back: PatchCoverage = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(back, want);

        cg_patch_coverage_free(pc);
        cg_coverage_free(cov);
        cg_diff_free(diff);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut cov = ptr::null_mut();
        let st = cg_coverage_parse(c(r#"{"files": []}"#).as_ptr(), &mut cov);
        assert_eq!(st, CgStatus::SchemaError);
        assert!(cov.is_null());
        assert!(last_error().contains("schema_version"));

        assert_eq!(cg_coverage_parse(ptr::null(), &mut cov), CgStatus::NullArgument);
        assert_eq!(cg_coverage_parse(c("{}").as_ptr(), ptr::null_mut()), CgStatus::NullArgument);

        let bad = [0xffu8, 0xfe, 0];
        let mut diff = ptr::null_mut();
        assert_eq!(cg_diff_parse(bad.as_ptr().cast(), &mut diff), CgStatus::InvalidUtf8);

        // A touched source file missing from the coverage report.
        let (mut d, mut cv, mut pc) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(cg_diff_parse(c(DIFF).as_ptr(), &mut d), CgStatus::Ok);
        assert_eq!(cg_coverage_parse(c(r#"{"schema_version": 1, "files": []}"#).as_ptr(), &mut cv), CgStatus::Ok);
        assert_eq!(cg_patch_coverage_compute(d, cv, &mut pc), CgStatus::CoverageError);
        assert!(last_error().contains("pkg/m.py"));
        assert_eq!(cg_patch_coverage_compute(ptr::null(), cv, &mut pc), CgStatus::NullArgument);
        cg_coverage_free(cv);
        cg_diff_free(d);

        // A successful call clears the previous message.
        let (mut n, mut dn) = (0, 0);
        assert_eq!(cg_jaccard_score(c("a.py").as_ptr(), c("b.py").as_ptr(), &mut n, &mut dn), CgStatus::Ok);
        assert!(cg_last_error_message().is_null());
    }
}

#[test]
fn annotation_and_line_errors() {
    unsafe {
        let src = c("a = 1\nif a:\n    b = 2\n");
        let (unc, br) = ([3u32], [2u32]);
        let mut out = ptr::null_mut();
        assert_eq!(cg_annotate_uncovered(src.as_ptr(), unc.as_ptr(), 1, br.as_ptr(), 1, &mut out), CgStatus::Ok);
        assert_eq!(
            take_string(out),
            "a = 1\nif a: # BRANCH PARTIALLY UNCOVERED!\n    b = 2 # UNCOVERED!\n"
        );
        assert_eq!(cg_annotate_uncovered(src.as_ptr(), ptr::null(), 0, ptr::null(), 0, &mut out), CgStatus::Ok);
        assert_eq!(take_string(out), "a = 1\nif a:\n    b = 2\n");
        let far = [9u32];
        assert_eq!(cg_annotate_uncovered(src.as_ptr(), far.as_ptr(), 1, ptr::null(), 0, &mut out), CgStatus::LineOutOfRange);
        assert!(out.is_null());
        assert_eq!(cg_annotate_uncovered(src.as_ptr(), ptr::null(), 2, ptr::null(), 0, &mut out), CgStatus::NullArgument);
    }
}

#[test]
fn jaccard_and_state_machine() {
    unsafe {
        let (mut n, mut d) = (0, 0);
        let st = cg_jaccard_score(
            c("scipy/linalg/tests/test_matrix.py").as_ptr(),
            c("scipy/linalg/matrix_decomp.py").as_ptr(),
            &mut n,
            &mut d,
        );
        assert_eq!(st, CgStatus::Ok);
        assert_eq!((n, d), (4, 7));
    }
    for passed in [false, true] {
        for added in [false, true] {
            for round in 0..5 {
                assert_eq!(cg_next_state(passed, added, round, 3), next_state(passed, added, round, 3).into());
            }
        }
    }
}

#[test]
fn version_and_null_tolerance() {
    let v = unsafe { CStr::from_ptr(cg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    unsafe {
        cg_diff_free(ptr::null_mut());
        cg_coverage_free(ptr::null_mut());
        cg_patch_coverage_free(ptr::null_mut());
        cg_string_free(ptr::null_mut());
        assert_eq!(cg_diff_file_count(ptr::null()), 0);
        assert!(cg_patch_coverage_ratio(ptr::null()).is_nan());
    }
}
