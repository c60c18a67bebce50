#ifndef DAL_H
#define DAL_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DalStatus {
  DAL_STATUS_OK = 0,
  DAL_STATUS_NULL_POINTER = 1,
  DAL_STATUS_INVALID_ARGUMENT = 2,
  DAL_STATUS_SHAPE = 3,
  DAL_STATUS_INCOMPATIBLE = 4,
  DAL_STATUS_PARSE = 5,
  DAL_STATUS_CONFIG = 6,
  DAL_STATUS_IO = 7,
  DAL_STATUS_INCOMPLETE = 8,
  DAL_STATUS_INTERNAL = 9,
  DAL_STATUS_PANIC = 10,
} DalStatus;

/**
 * A loaded run configuration.
 */
typedef struct DalConfig DalConfig;

/**
 * The outcome of one configured run: one entry per matrix cell.
 */
typedef struct DalRun DalRun;

/**
 * Span-level precision, recall and F1.
 */
typedef struct DalSpanScores {
  double precision;
  double recall;
  double f1;
} DalSpanScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dal_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *dal_last_error(void);

/**
 * Loads a TOML configuration or a `manifest.json` from a previous run.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DalStatus dal_config_load(const char *path, struct DalConfig **out);

/**
 * Parses a TOML configuration held in memory. Relative paths stay relative
 * to the working directory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DalStatus dal_config_parse(const char *toml, struct DalConfig **out);

/**
 * # Safety
 * `config` must come from `dal_config_load`/`dal_config_parse` or be NULL.
 */
void dal_config_free(struct DalConfig *config);

/**
 * Runs every configured cell and writes CSV, summaries and the manifest to
 * `out_dir`. `workers == 0` uses one worker per core. The handle is
 * returned even when some seeds failed; check `dal_run_is_complete`.
 *
 * # Safety
 * `config` must be a live handle, `out_dir` NUL-terminated, `out` valid.
 */
enum DalStatus dal_run(const struct DalConfig *config,
                       const char *out_dir,
                       size_t workers,
                       struct DalRun **out);

/**
 * # Safety
 * `run` must come from `dal_run` or be NULL.
 */
void dal_run_free(struct DalRun *run);

/**
 * # Safety
 * `run` must be a live handle and `out` valid.
 */
enum DalStatus dal_run_is_complete(const struct DalRun *run, bool *out);

/**
 * Number of matrix cells in the run.
 *
 * # Safety
 * `run` must be a live handle and `out` valid.
 */
enum DalStatus dal_run_count(const struct DalRun *run, size_t *out);

/**
 * Name of cell `index`; the string lives as long as the handle.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
const char *dal_run_name(const struct DalRun *run, size_t index);

/**
 * Area under the mean learning curve of cell `index`. Returns
 * `DAL_STATUS_INCOMPLETE` when a seed of that cell failed.
 *
 * # Safety
 * `run` must be a live handle and `out` valid.
 */
enum DalStatus dal_run_auc(const struct DalRun *run, size_t index, double *out);

/**
 * Random scores for `n` examples: a seeded permutation of `0..n`.
 *
 * # Safety
 * `scores` must hold `n` doubles.
 */
enum DalStatus dal_score_random(size_t n, uint64_t seed, double *scores);

/**
 * Least-confidence scores. `probs` is row-major `n x classes`.
 *
 * # Safety
 * `probs` must hold `n * classes` doubles and `scores` `n`.
 */
enum DalStatus dal_score_lc(const double *probs, size_t n, size_t classes, double *scores);

/**
 * Predictive-entropy scores. `probs` is row-major `n x classes`.
 *
 * # Safety
 * `probs` must hold `n * classes` doubles and `scores` `n`.
 */
enum DalStatus dal_score_max_entropy(const double *probs, size_t n, size_t classes, double *scores);

/**
 * MNLP scores for `n` sequences. `probs` holds the token rows of every
 * sequence back to back; sequence `i` has `lengths[i]` rows of `classes`.
 *
 * # Safety
 * `lengths` and `scores` must hold `n` entries and `probs`
 * `sum(lengths) * classes` doubles.
 */
enum DalStatus dal_score_mnlp(const double *probs,
                              const size_t *lengths,
                              size_t n,
                              size_t classes,
                              double *scores);

/**
 * BALD vote-disagreement scores and tie-breaks over `passes` stochastic
 * passes. Each pass uses the layout of `dal_score_mnlp`, and passes are
 * stored back to back. `lengths` may be NULL for classification, meaning one
 * row per example. `tiebreaks` may be NULL.
 *
 * # Safety
 * Buffers must match the sizes above.
 */
enum DalStatus dal_score_bald(const double *probs,
                              size_t passes,
                              const size_t *lengths,
                              size_t n,
                              size_t classes,
                              double *scores,
                              double *tiebreaks);

/**
 * Greedy batch selection: examples in order of score descending, tie-break
 * ascending, index ascending, until the summed cost reaches `budget`
 * (the crossing example is included). `tiebreaks` may be NULL (all zero)
 * and `costs` may be NULL (all one). Selected indices go to `selected`,
 * which must hold `n` entries, and their count to `count`.
 *
 * # Safety
 * Buffers must match the sizes above.
 */
enum DalStatus dal_select_batch(const double *scores,
                                const double *tiebreaks,
                                const size_t *costs,
                                size_t n,
                                size_t budget,
                                size_t *selected,
                                size_t *count);

/**
 * Exact-match span scores for BIO tag sequences. Each argument holds one
 * sentence per line with whitespace-separated tags; blank lines are ignored.
 *
 * # Safety
 * Strings must be NUL-terminated and `out` valid.
 */
enum DalStatus dal_span_f1(const char *predicted, const char *gold, struct DalSpanScores *out);

/**
 * Trapezoidal area under a learning curve, normalised by the fraction range.
 *
 * # Safety
 * `fractions` and `values` must hold `n` doubles and `out` be valid.
 */
enum DalStatus dal_curve_auc(const double *fractions, const double *values, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAL_H */
