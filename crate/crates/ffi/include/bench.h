#ifndef BENCH_H
#define BENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BenchStatus {
  BENCH_STATUS_OK = 0,
  BENCH_STATUS_NULL_ARGUMENT,
  BENCH_STATUS_INVALID_UTF8,
  BENCH_STATUS_INVALID_JSON,
  BENCH_STATUS_INVALID,
  BENCH_STATUS_DUPLICATE_CASE_ID,
  BENCH_STATUS_UNKNOWN_LABEL,
  BENCH_STATUS_EMPTY_DATASET,
  BENCH_STATUS_FRACTION_OUT_OF_RANGE,
  BENCH_STATUS_MANIFEST_MISMATCH,
  BENCH_STATUS_UNAUTHORIZED,
  BENCH_STATUS_MODEL_NOT_FOUND,
  BENCH_STATUS_NOT_ELIGIBLE,
  BENCH_STATUS_DUPLICATE_SUBMISSION,
  BENCH_STATUS_SPAWN_FAILED,
  BENCH_STATUS_MISSING_GOLD,
  BENCH_STATUS_RUN_MISMATCH,
  BENCH_STATUS_TASK_MISMATCH,
  BENCH_STATUS_UNKNOWN_TASK,
  BENCH_STATUS_NOT_FOUND,
  BENCH_STATUS_CORRUPT_LOG,
  BENCH_STATUS_IO,
  BENCH_STATUS_PANIC,
} BenchStatus;

typedef enum BenchGrade {
  BENCH_GRADE_FAIL = 0,
  BENCH_GRADE_DECISION_SUPPORT = 1,
  BENCH_GRADE_AUTONOMOUS = 2,
} BenchGrade;

/**
 * A registered dataset.
 */
typedef struct BenchDataset BenchDataset;

/**
 * One task's leaderboard.
 */
typedef struct BenchLeaderboard BenchLeaderboard;

/**
 * A split manifest.
 */
typedef struct BenchSplit BenchSplit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call on the same thread.
 */
const char *bench_last_error(void);

/**
 * Library version, static.
 */
const char *bench_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void bench_string_free(char *s);

/**
 * # Safety
 * `data`/`len` must be NULL or a buffer returned by this library, freed once.
 */
void bench_bytes_free(uint8_t *data, size_t len);

uint64_t bench_splitmix64(uint64_t seed);

/**
 * # Safety
 * `data` must point to `len` readable bytes (or be NULL with `len` 0).
 */
uint64_t bench_fnv1a64(const uint8_t *data, size_t len);

/**
 * Builds a dataset from a task descriptor (JSON) and cases (JSON lines).
 *
 * # Safety
 * Pointers must be valid NUL-terminated strings; `out` must be writable.
 */
enum BenchStatus bench_dataset_new(const char *task_json,
                                   const char *cases_jsonl,
                                   struct BenchDataset **out);

/**
 * `{"dataset_id", "content_digest", "n_cases", "task_id"}`.
 *
 * # Safety
 * `ds` must be a live handle; `out` writable.
 */
enum BenchStatus bench_dataset_info(const struct BenchDataset *ds, char **out);

/**
 * # Safety
 * `ds` must be NULL or a live handle, freed once.
 */
void bench_dataset_free(struct BenchDataset *ds);

/**
 * Stratified split with test fraction `num/den`.
 *
 * # Safety
 * `ds` must be a live handle; `out` writable.
 */
enum BenchStatus bench_split_new(const struct BenchDataset *ds,
                                 uint64_t seed,
                                 int64_t num,
                                 int64_t den,
                                 struct BenchSplit **out);

/**
 * The manifest as canonical JSON.
 *
 * # Safety
 * `split` must be a live handle; `out` writable.
 */
enum BenchStatus bench_split_json(const struct BenchSplit *split, char **out);

/**
 * # Safety
 * `split` must be NULL or a live handle, freed once.
 */
void bench_split_free(struct BenchSplit *split);

/**
 * Public archive (tar) of the split's train side.
 *
 * # Safety
 * Handles must be live; `out_data` and `out_len` writable.
 */
enum BenchStatus bench_export_public(const struct BenchDataset *ds,
                                     const struct BenchSplit *split,
                                     uint8_t **out_data,
                                     size_t *out_len);

/**
 * Metric block for predictions (JSON array of prediction records) against
 * labeled cases (JSON array), at depth `k`.
 *
 * # Safety
 * Strings must be valid; `out` writable.
 */
enum BenchStatus bench_metrics(const char *predictions_json,
                               const char *cases_json,
                               uint32_t k,
                               char **out);

/**
 * Top-1 disparity across the values of subgroup `key`, as a fraction object.
 *
 * # Safety
 * Strings must be valid; `out` writable.
 */
enum BenchStatus bench_subgroup_disparity(const char *predictions_json,
                                          const char *cases_json,
                                          const char *key,
                                          char **out);

/**
 * Robustness ratio of two metric blocks (JSON).
 *
 * # Safety
 * Strings must be valid; `out` writable.
 */
enum BenchStatus bench_robustness_ratio(const char *clean_json,
                                        const char *perturbed_json,
                                        char **out);

/**
 * Agreement between two run results (JSON).
 *
 * # Safety
 * Strings must be valid; `out` writable.
 */
enum BenchStatus bench_reproducibility(const char *run_a_json, const char *run_b_json, char **out);

/**
 * Perturbs one case (JSON) with relative magnitude `magnitude`.
 *
 * # Safety
 * `case_json` must be valid; `out` writable.
 */
enum BenchStatus bench_perturb_case(const char *case_json,
                                    double magnitude,
                                    uint64_t run_seed,
                                    char **out);

/**
 * Grade of a report (JSON) under thresholds (JSON).
 *
 * # Safety
 * Strings must be valid; `out` writable.
 */
enum BenchStatus bench_classify(const char *report_json,
                                const char *thresholds_json,
                                enum BenchGrade *out);

/**
 * Empty leaderboard for a task (JSON descriptor).
 *
 * # Safety
 * `task_json` must be valid; `out` writable.
 */
enum BenchStatus bench_leaderboard_new(const char *task_json, struct BenchLeaderboard **out);

/**
 * Inserts a digest-stamped report; idempotent per digest.
 *
 * # Safety
 * `lb` must be a live handle; `report_json` valid.
 */
enum BenchStatus bench_leaderboard_insert(struct BenchLeaderboard *lb,
                                          const char *report_json,
                                          bool baseline);

/**
 * Adds the human gold-standard pseudo-entry with rate `num/den`, created
 * at `created_at` (RFC 3339).
 *
 * # Safety
 * `lb` must be a live handle; `created_at` a valid string.
 */
enum BenchStatus bench_leaderboard_set_human_rate(struct BenchLeaderboard *lb,
                                                  int64_t num,
                                                  int64_t den,
                                                  const char *created_at);

/**
 * Entries in rank order as a JSON array. `filter_json` may be NULL.
 *
 * # Safety
 * `lb` must be a live handle; `out` writable.
 */
enum BenchStatus bench_leaderboard_entries(const struct BenchLeaderboard *lb,
                                           const char *filter_json,
                                           char **out);

/**
 * Plain-text rendering of the full view.
 *
 * # Safety
 * `lb` must be a live handle; `out` writable.
 */
enum BenchStatus bench_leaderboard_render(const struct BenchLeaderboard *lb, char **out);

/**
 * # Safety
 * `lb` must be NULL or a live handle, freed once.
 */
void bench_leaderboard_free(struct BenchLeaderboard *lb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BENCH_H */
