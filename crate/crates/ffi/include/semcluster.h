#ifndef SEMCLUSTER_H
#define SEMCLUSTER_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum SmcStatus {
  SMC_STATUS_OK = 0,
  SMC_STATUS_NULL_ARGUMENT = 1,
  SMC_STATUS_INVALID_UTF8 = 2,
  SMC_STATUS_INVALID_ARGUMENT = 3,
  SMC_STATUS_CONFIG = 4,
  SMC_STATUS_BACKEND = 5,
  SMC_STATUS_STAGE = 6,
  SMC_STATUS_IO = 7,
  SMC_STATUS_PANIC = 8,
} SmcStatus;

// An open pipeline run.
typedef struct SmcPipeline SmcPipeline;

// Owned list of strings.
typedef struct SmcStringList SmcStringList;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Empty when none. The
// pointer stays valid until the next failing call on the same thread.
const char *smc_last_error_message(void);

// Library version, statically allocated.
const char *smc_version(void);

// Normalized-entropy bias of `len` cluster counts.
//
// # Safety
// `counts` points to `len` readable values; `out` is writable.
enum SmcStatus smc_bias_intensity(const uint64_t *counts, size_t len, double *out);

// Normalized mutual information of a row-major `rows` x `cols` count table.
//
// # Safety
// `table` points to `rows * cols` readable values; `out` is writable.
enum SmcStatus smc_spurious_correlation(const uint64_t *table,
                                        size_t rows,
                                        size_t cols,
                                        double *out);

// Clustering accuracy of `n` predicted cluster names against `n` labels,
// paired by position.
//
// # Safety
// `predicted` and `labels` point to `n` NUL-terminated strings; `out` is
// writable.
enum SmcStatus smc_clustering_accuracy(const char *const *predicted,
                                       const char *const *labels,
                                       size_t n,
                                       double *out);

// `2ab / (a + b)`, zero when both are zero.
double smc_harmonic_mean(double a, double b);

// Parses a bulleted or numbered model response into a list.
//
// # Safety
// `text` is NUL-terminated; `out` is writable. Free the result with
// [`smc_string_list_free`].
enum SmcStatus smc_parse_bullets(const char *text, struct SmcStringList **out);

// # Safety
// `list` is null or a live list.
size_t smc_string_list_len(const struct SmcStringList *list);

// Borrowed item `index`, or null when out of range. Valid until the list
// is freed.
//
// # Safety
// `list` is null or a live list.
const char *smc_string_list_get(const struct SmcStringList *list, size_t index);

// # Safety
// `list` is null or a list not yet freed.
void smc_string_list_free(struct SmcStringList *list);

// Opens a run from a configuration file. `run_id` may be null.
//
// # Safety
// String arguments are NUL-terminated; `out` is writable. Free the result
// with [`smc_pipeline_free`].
enum SmcStatus smc_pipeline_open(const char *config_path,
                                 const char *run_id,
                                 bool offline,
                                 struct SmcPipeline **out);

// Runs one stage by name: `caption`, `propose`, `group`, `evaluate`,
// `bias`, `popularity`, `report` or `all`.
//
// # Safety
// `pipeline` is a live handle; `stage` is NUL-terminated.
enum SmcStatus smc_pipeline_run_stage(struct SmcPipeline *pipeline, const char *stage);

// Run directory of the handle, borrowed until it is freed.
//
// # Safety
// `pipeline` is null or a live handle.
const char *smc_pipeline_run_dir(const struct SmcPipeline *pipeline);

// Releases the handle and its directory lock.
//
// # Safety
// `pipeline` is null or a handle not yet freed.
void smc_pipeline_free(struct SmcPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMCLUSTER_H */
