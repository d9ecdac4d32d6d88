#ifndef SQDP_H
#define SQDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SQDP_ALG_KELLEY 0

#define SQDP_ALG_QCSC 1

#define SQDP_ALG_QCSC_REFORM 2

typedef enum SqdpStatus {
  SQDP_STATUS_OK = 0,
  SQDP_STATUS_NULL_POINTER = 1,
  SQDP_STATUS_INVALID_INPUT = 2,
  SQDP_STATUS_DIMENSION = 3,
  SQDP_STATUS_INFEASIBLE = 4,
  SQDP_STATUS_UNBOUNDED = 5,
  SQDP_STATUS_NON_CONVERGENCE = 6,
  SQDP_STATUS_BUDGET_EXCEEDED = 7,
  SQDP_STATUS_ITERATION_LIMIT = 8,
  SQDP_STATUS_UNSUPPORTED = 9,
  SQDP_STATUS_IO = 10,
  SQDP_STATUS_INTERNAL = 11,
  SQDP_STATUS_PANIC = 12,
} SqdpStatus;

/**
 * A multistage instance.
 */
typedef struct SqdpInstance SqdpInstance;

/**
 * The result of a decomposition run.
 */
typedef struct SqdpReport SqdpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sqdp_last_error(void);

/**
 * Library version as a static string.
 */
const char *sqdp_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sqdp_string_free(char *s);

/**
 * Draws a random benchmark instance.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SqdpStatus sqdp_instance_generate(size_t stages,
                                       size_t n,
                                       size_t realizations,
                                       double lambda0,
                                       uint64_t seed,
                                       struct SqdpInstance **out);

/**
 * Parses an instance document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SqdpStatus sqdp_instance_from_json(const char *json, struct SqdpInstance **out);

/**
 * Serializes an instance; free the result with `sqdp_string_free`.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum SqdpStatus sqdp_instance_to_json(const struct SqdpInstance *inst, char **out);

/**
 * Number of stages, or 0 for a null handle.
 *
 * # Safety
 * `inst` must be null or a live handle.
 */
size_t sqdp_instance_num_stages(const struct SqdpInstance *inst);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `inst` must be null or a live handle.
 */
size_t sqdp_instance_dim(const struct SqdpInstance *inst);

/**
 * # Safety
 * `inst` must be null or a handle not yet freed.
 */
void sqdp_instance_free(struct SqdpInstance *inst);

/**
 * Runs the decomposition. `config_json` is a solver configuration object
 * and may be null for the defaults. A run that stops at the iteration cap
 * still produces a report and returns `IterationLimit`.
 *
 * # Safety
 * `inst` must be a live handle, `config_json` null or NUL-terminated, and
 * `out` a valid pointer.
 */
enum SqdpStatus sqdp_solve(const struct SqdpInstance *inst,
                           const char *config_json,
                           struct SqdpReport **out);

/**
 * Final bounds of a report. `ub` is NaN when no upper bound was formed.
 * Any output pointer may be null.
 *
 * # Safety
 * `report` must be a live handle; non-null outputs must be valid.
 */
enum SqdpStatus sqdp_report_bounds(const struct SqdpReport *report,
                                   double *lb,
                                   double *ub,
                                   size_t *iterations,
                                   int *converged);

/**
 * Full report as JSON; free the result with `sqdp_string_free`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum SqdpStatus sqdp_report_to_json(const struct SqdpReport *report, char **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void sqdp_report_free(struct SqdpReport *report);

/**
 * Optimal value of the full scenario tree. `root_decision`, when not null,
 * receives the `n` stage-1 decisions.
 *
 * # Safety
 * `inst` must be a live handle, `value` valid, `root_decision` null or
 * writable for `n` doubles.
 */
enum SqdpStatus sqdp_extensive_value(const struct SqdpInstance *inst,
                                     size_t node_budget,
                                     double *value,
                                     double *root_decision);

/**
 * Cost-to-go of stages `t..=T` from state `x` (length `n`); 0 for `t = T+1`.
 *
 * # Safety
 * `inst` must be a live handle, `x` readable for `n` doubles and `value`
 * valid.
 */
enum SqdpStatus sqdp_subtree_value(const struct SqdpInstance *inst,
                                   size_t t,
                                   const double *x,
                                   size_t n,
                                   size_t node_budget,
                                   double *value);

/**
 * Minimizes a piecewise-quadratic objective. `objective_json` selects the
 * built-in one-dimensional example when null. `max_iter` 0 picks the
 * default cap. `best_point` receives `n` doubles. Hitting the cap fills the
 * outputs and returns `IterationLimit`.
 *
 * # Safety
 * Pointers must be valid for the lengths given; `objective_json` null or
 * NUL-terminated.
 */
enum SqdpStatus sqdp_qcsc_run(const char *objective_json,
                              const double *x0,
                              size_t n,
                              double eps,
                              int algorithm,
                              size_t max_iter,
                              double *best_value,
                              double *best_point,
                              size_t *iterations);

/**
 * Worst-case QCSC iteration count for the given constants.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SqdpStatus sqdp_complexity_bound(double m,
                                      double l,
                                      double mu,
                                      double d,
                                      double eps,
                                      uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQDP_H */
