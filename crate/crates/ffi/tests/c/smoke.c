#include <stdio.h>
#include <string.h>

#include "covergap.h"

static const char *DIFF =
    "diff --git a/pkg/m.py b/pkg/m.py\n"
    "--- a/pkg/m.py\n"
    "+++ b/pkg/m.py\n"
    "@@ -1,1 +1,3 @@\n"
    " def f(x):\n"
    "+    if x:\n"
    "+        return 1\n";

static const char *COVERAGE =
    "{\"schema_version\": 1, \"files\": [{\"path\": \"pkg/m.py\", "
    "\"executable_lines\": [1, 2, 3], \"covered_lines\": [1, 2], \"missed_branch_lines\": [2]}]}";

int main(void) {
    CgDiff *diff = NULL;
    CgCoverage *cov = NULL;
    CgPatchCoverage *pc = NULL;
    char *json = NULL;
    char *annotated = NULL;
    size_t num = 0, den = 0;
    uint32_t unc[] = {3};
    uint32_t br[] = {2};

    if (cg_diff_parse(DIFF, &diff) != CG_STATUS_OK) return 1;
    if (cg_coverage_parse(COVERAGE, &cov) != CG_STATUS_OK) return 2;
    if (cg_patch_coverage_compute(diff, cov, &pc) != CG_STATUS_OK) return 3;
    if (cg_patch_coverage_executable_count(pc) != 2 || cg_patch_coverage_uncovered_count(pc) != 1) return 4;
    if (cg_patch_coverage_ratio(pc) != 0.5) return 5;
    if (cg_patch_coverage_to_json(pc, &json) != CG_STATUS_OK || strstr(json, "\"uncovered\"") == NULL) return 6;
    if (cg_annotate_uncovered("def f(x):\n    if x:\n        return 1\n", unc, 1, br, 1, &annotated) != CG_STATUS_OK) return 7;
    if (strstr(annotated, "return 1 # UNCOVERED!") == NULL) return 8;
    if (cg_jaccard_score("scipy/linalg/tests/test_matrix.py", "scipy/linalg/matrix_decomp.py", &num, &den) != CG_STATUS_OK) return 9;
    if (num != 4 || den != 7) return 10;
    if (cg_next_state(true, false, 3, 3) != CG_FEEDBACK_STATE_EXHAUSTED) return 11;
    if (cg_coverage_parse("{\"files\": []}", &cov) == CG_STATUS_OK || cg_last_error_message() == NULL) return 12;

    printf("covergap %s ok\n", cg_version());
    cg_string_free(json);
    cg_string_free(annotated);
    cg_patch_coverage_free(pc);
    cg_diff_free(diff);
    return 0;
}
