#include <math.h>
#include <stdio.h>
#include <string.h>

#include "semcluster.h"

static int failures = 0;

static void check(int cond, const char *what) {
    if (!cond) {
        fprintf(stderr, "FAIL %s: %s\n", what, smc_last_error_message());
        failures++;
    }
}

int main(void) {
    uint64_t counts[2] = {3, 1};
    double v = -1;
    check(smc_bias_intensity(counts, 2, &v) == SMC_STATUS_OK && fabs(v - 0.18872187554086717) < 1e-12, "bias");

    uint64_t table[4] = {25, 0, 0, 25};
    check(smc_spurious_correlation(table, 2, 2, &v) == SMC_STATUS_OK && fabs(v - 1.0) < 1e-12, "correlation");

    const char *pred[4] = {"A", "A", "B", "B"};
    const char *gt[4] = {"x", "y", "y", "x"};
    check(smc_clustering_accuracy(pred, gt, 4, &v) == SMC_STATUS_OK && v == 0.5, "cacc");

    SmcStringList *list = NULL;
    check(smc_parse_bullets("Sure:\n* Activity\n* Mood", &list) == SMC_STATUS_OK, "parse");
    check(smc_string_list_len(list) == 2 && strcmp(smc_string_list_get(list, 1), "Mood") == 0, "list");
    smc_string_list_free(list);

    check(smc_parse_bullets("no list here", &list) == SMC_STATUS_INVALID_ARGUMENT && list == NULL, "parse error");
    check(strlen(smc_last_error_message()) > 0, "message");
    check(smc_bias_intensity(NULL, 2, &v) == SMC_STATUS_NULL_ARGUMENT, "null");
    return failures == 0 ? 0 : 1;
}
