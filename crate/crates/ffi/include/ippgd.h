#ifndef IPPGD_H
#define IPPGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IppgdMethod {
  IPPGD_METHOD_PGD = 0,
  IPPGD_METHOD_IPPGD = 1,
  IPPGD_METHOD_IPPGDV = 2,
  IPPGD_METHOD_IPPGDV_TAU = 3,
} IppgdMethod;

typedef enum IppgdRunStatus {
  IPPGD_RUN_STATUS_CONVERGED = 0,
  IPPGD_RUN_STATUS_MAX_ITERS = 1,
  IPPGD_RUN_STATUS_DIVERGED = 2,
  IPPGD_RUN_STATUS_FAILED = 3,
} IppgdRunStatus;

typedef enum IppgdStatus {
  IPPGD_STATUS_OK = 0,
  IPPGD_STATUS_NULL_POINTER = 1,
  IPPGD_STATUS_INVALID_ARGUMENT = 2,
  IPPGD_STATUS_PARSE = 3,
  IPPGD_STATUS_NUMERICAL = 4,
  IPPGD_STATUS_IO = 5,
  IPPGD_STATUS_BUFFER_TOO_SMALL = 6,
  IPPGD_STATUS_PANIC = 7,
} IppgdStatus;

/**
 * Solver settings for one method.
 */
typedef struct IppgdConfig IppgdConfig;

/**
 * A quadratic test problem or the flux problem on a uniform grid.
 */
typedef struct IppgdProblem IppgdProblem;

/**
 * Final iterate, status and trace summary of one run.
 */
typedef struct IppgdResult IppgdResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ippgd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ippgd_version(void);

/**
 * Random equality-constrained quadratic. `schur_delta` in `[0,1)` sets the
 * inexactness of its Schur approximation.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum IppgdStatus ippgd_problem_quadratic(size_t dim,
                                         size_t constraints,
                                         double kappa,
                                         uint64_t seed,
                                         double schur_delta,
                                         struct IppgdProblem **out);

/**
 * Flux problem on an `n × n` grid with `ν(s) = a0 + a1/(1+s)^a2`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum IppgdStatus ippgd_problem_pde(size_t n,
                                   double a0,
                                   double a1,
                                   double a2,
                                   struct IppgdProblem **out);

/**
 * Builds a problem and a solver configuration from TOML text with
 * `[problem]` and optional `[solver]` tables.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `problem` and `config` valid
 * pointers to writable storage.
 */
enum IppgdStatus ippgd_from_toml(const char *toml,
                                 struct IppgdProblem **problem,
                                 struct IppgdConfig **config);

/**
 * Number of unknowns.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t ippgd_problem_dim(const struct IppgdProblem *problem);

/**
 * # Safety
 * `problem` must be null or a handle not yet freed.
 */
void ippgd_problem_free(struct IppgdProblem *problem);

/**
 * Default settings of `method` for `problem`, including its step size.
 *
 * # Safety
 * `problem` must be a live handle and `out` writable.
 */
enum IppgdStatus ippgd_config_new(const struct IppgdProblem *problem,
                                  enum IppgdMethod method,
                                  struct IppgdConfig **out);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum IppgdStatus ippgd_config_set_alpha(struct IppgdConfig *config, double alpha);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum IppgdStatus ippgd_config_set_tau(struct IppgdConfig *config, double tau);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum IppgdStatus ippgd_config_set_max_iters(struct IppgdConfig *config, size_t max_iters);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum IppgdStatus ippgd_config_set_tolerances(struct IppgdConfig *config,
                                             double grad_tol,
                                             double step_tol);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void ippgd_config_free(struct IppgdConfig *config);

/**
 * Runs the solver from zero. Hitting the iteration limit or diverging is
 * not an error here; inspect [`ippgd_result_status`].
 *
 * # Safety
 * `problem` and `config` must be live handles and `out` writable.
 */
enum IppgdStatus ippgd_solve(const struct IppgdProblem *problem,
                             const struct IppgdConfig *config,
                             struct IppgdResult **out);

/**
 * # Safety
 * `result` must be a live handle.
 */
enum IppgdRunStatus ippgd_result_status(const struct IppgdResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ippgd_result_iterations(const struct IppgdResult *result);

/**
 * Inner W-cycles summed over all iterations.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ippgd_result_total_cycles(const struct IppgdResult *result);

/**
 * Gradient measure at the last recorded iterate, NaN when unavailable.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double ippgd_result_grad_norm(const struct IppgdResult *result);

/**
 * Copies the final iterate into `buf`. With `len` smaller than the
 * dimension nothing is written and `IPPGD_STATUS_BUFFER_TOO_SMALL` returned.
 *
 * # Safety
 * `result` must be a live handle and `buf` valid for `len` doubles.
 */
enum IppgdStatus ippgd_result_solution(const struct IppgdResult *result, double *buf, size_t len);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void ippgd_result_free(struct IppgdResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IPPGD_H */
