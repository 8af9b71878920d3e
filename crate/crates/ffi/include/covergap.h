#ifndef COVERGAP_H
#define COVERGAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_ARGUMENT = 1,
  CG_STATUS_INVALID_UTF8 = 2,
  CG_STATUS_DIFF_ERROR = 3,
  CG_STATUS_SCHEMA_ERROR = 4,
  CG_STATUS_COVERAGE_ERROR = 5,
  CG_STATUS_LINE_OUT_OF_RANGE = 6,
  CG_STATUS_SERIALIZE_ERROR = 7,
  CG_STATUS_PANIC = 99,
} CgStatus;

typedef enum CgFeedbackState {
  CG_FEEDBACK_STATE_ACCEPT = 0,
  CG_FEEDBACK_STATE_FIX_ERROR = 1,
  CG_FEEDBACK_STATE_FIX_PRESERVE_COVERAGE = 2,
  CG_FEEDBACK_STATE_INCREASE_COVERAGE = 3,
  CG_FEEDBACK_STATE_EXHAUSTED = 4,
} CgFeedbackState;

/*
 Normalized coverage report.
 */
typedef struct CgCoverage CgCoverage;

/*
 Parsed unified diff.
 */
typedef struct CgDiff CgDiff;

/*
 Patch coverage of a diff against a coverage report.
 */
typedef struct CgPatchCoverage CgPatchCoverage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next covergap call on the same thread.
 */
const char *cg_last_error_message(void);

/*
 Release a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void cg_string_free(char *s);

/*
 Library version as a static string.
 */
const char *cg_version(void);

/*
 Parse a unified diff.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum CgStatus cg_diff_parse(const char *text, struct CgDiff **out);

/*
 # Safety
 `diff` must come from [`cg_diff_parse`] and not have been freed.
 */
void cg_diff_free(struct CgDiff *diff);

/*
 Number of files in the diff; 0 for null.

 # Safety
 `diff` must be null or a live handle.
 */
uintptr_t cg_diff_file_count(const struct CgDiff *diff);

/*
 Parse a coverage report (JSON with `schema_version`).

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CgStatus cg_coverage_parse(const char *json, struct CgCoverage **out);

/*
 # Safety
 `cov` must come from [`cg_coverage_parse`] and not have been freed.
 */
void cg_coverage_free(struct CgCoverage *cov);

/*
 Patch coverage of `diff` against `cov`.

 # Safety
 `diff` and `cov` must be live handles; `out` must be writable.
 */
enum CgStatus cg_patch_coverage_compute(const struct CgDiff *diff,
                                        const struct CgCoverage *cov,
                                        struct CgPatchCoverage **out);

/*
 # Safety
 `pc` must come from [`cg_patch_coverage_compute`] and not have been freed.
 */
void cg_patch_coverage_free(struct CgPatchCoverage *pc);

/*
 |C| / |E|, or 1.0 when no executable line changed. NaN for null.

 # Safety
 `pc` must be null or a live handle.
 */
double cg_patch_coverage_ratio(const struct CgPatchCoverage *pc);

/*
 Number of changed executable lines; 0 for null.

 # Safety
 `pc` must be null or a live handle.
 */
uintptr_t cg_patch_coverage_executable_count(const struct CgPatchCoverage *pc);

/*
 Number of changed lines the suite covers; 0 for null.

 # Safety
 `pc` must be null or a live handle.
 */
uintptr_t cg_patch_coverage_covered_count(const struct CgPatchCoverage *pc);

/*
 Number of changed lines the suite misses; 0 for null.

 # Safety
 `pc` must be null or a live handle.
 */
uintptr_t cg_patch_coverage_uncovered_count(const struct CgPatchCoverage *pc);

/*
 The full line sets as JSON. Free the result with [`cg_string_free`].

 # Safety
 `pc` must be a live handle; `out` must be writable.
 */
enum CgStatus cg_patch_coverage_to_json(const struct CgPatchCoverage *pc, char **out);

/*
 Mark `uncovered` lines and partially covered `branches` (1-based) with
 trailing comments. Free the result with [`cg_string_free`].

 # Safety
 `source` must be a NUL-terminated string; each array must hold at least
 its count of elements (or be null when the count is 0); `out` must be
 writable.
 */
enum CgStatus cg_annotate_uncovered(const char *source,
                                    const uint32_t *uncovered,
                                    uintptr_t n_uncovered,
                                    const uint32_t *branches,
                                    uintptr_t n_branches,
                                    char **out);

/*
 Jaccard similarity of the path tokens of `a` and `b` as an exact
 fraction `num / den`.

 # Safety
 `a` and `b` must be NUL-terminated strings; `num` and `den` writable.
 */
enum CgStatus cg_jaccard_score(const char *a, const char *b, uintptr_t *num, uintptr_t *den);

/*
 Next state of the feedback loop after one test run.
 */
enum CgFeedbackState cg_next_state(bool passed,
                                   bool added_any,
                                   uint32_t round,
                                   uint32_t max_rounds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVERGAP_H */
