#ifndef LOWRANK_H
#define LOWRANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LrStatus {
  LR_STATUS_OK = 0,
  LR_STATUS_NULL_POINTER = 1,
  LR_STATUS_INVALID_ARGUMENT = 2,
  LR_STATUS_DIMENSION_MISMATCH = 3,
  LR_STATUS_CONFIG = 4,
  LR_STATUS_IO = 5,
  LR_STATUS_BUFFER_TOO_SMALL = 6,
  LR_STATUS_PANIC = 7,
} LrStatus;

typedef enum LrEnsembleKind {
  LR_ENSEMBLE_KIND_GAUSSIAN_SENSING = 0,
  LR_ENSEMBLE_KIND_QUADRATIC_I = 1,
  LR_ENSEMBLE_KIND_QUADRATIC_II = 2,
  LR_ENSEMBLE_KIND_BILINEAR = 3,
  LR_ENSEMBLE_KIND_ENTRYWISE_MASK = 4,
} LrEnsembleKind;

typedef enum LrPenalty {
  LR_PENALTY_SCALED_L1 = 0,
  LR_PENALTY_SCALED_L2 = 1,
  LR_PENALTY_FROBENIUS = 2,
  LR_PENALTY_SQUARED_L2 = 3,
  LR_PENALTY_ENTRYWISE_L1 = 4,
} LrPenalty;

typedef enum LrMethod {
  LR_METHOD_POLYAK = 0,
  LR_METHOD_GEOMETRIC = 1,
  LR_METHOD_PROX_LINEAR = 2,
} LrMethod;

typedef enum LrStepPenalty {
  // `(p1 / 2) ||.||^2`
  LR_STEP_PENALTY_QUADRATIC = 0,
  // `p1 ||.||^2 + p2 ||.||`
  LR_STEP_PENALTY_QUAD_PLUS_LINEAR = 1,
  // `(1 / 2 p1) ||.||_{2,1}^2`
  LR_STEP_PENALTY_ROW_NORM_SQUARED = 2,
} LrStepPenalty;

typedef enum LrTraceStatus {
  LR_TRACE_STATUS_CONVERGED = 0,
  LR_TRACE_STATUS_MAX_ITERS = 1,
  LR_TRACE_STATUS_STALLED = 2,
} LrTraceStatus;

typedef struct LrEnsemble LrEnsemble;

typedef struct LrInstance LrInstance;

typedef struct LrTrace LrTrace;

// Solver selection and parameters. Fields unused by `method` are ignored.
typedef struct LrSolverSpec {
  enum LrMethod method;
  // Number of iterates the solver may visit, including `x0`.
  size_t max_iters;
  double stop_rel_error;
  // Geometric initial step.
  double lambda;
  // Geometric decay factor in `(0, 1)`.
  double q;
  enum LrStepPenalty step_penalty;
  double p1;
  double p2;
  // Nonzero selects the `scale / 2k` subproblem tolerance schedule.
  uint8_t harmonic_subproblems;
} LrSolverSpec;

// One recorded iteration.
typedef struct LrTraceRecord {
  uint64_t k;
  double objective;
  double rel_error;
  double distance;
  // NaN when no step was taken.
  double step;
  double elapsed;
} LrTraceRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated, truncated
// to `len - 1` bytes) and returns the full message length, or 0 if there is none.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t lr_last_error_message(char *buf, size_t len);

// Builds an ensemble with Gaussian sampling data. `m_or_p` is the measurement count,
// or the observation probability for masks.
//
// # Safety
// `out` must be a valid pointer location.
enum LrStatus lr_ensemble_new(enum LrEnsembleKind kind,
                              size_t d1,
                              size_t d2,
                              double m_or_p,
                              uint64_t seed,
                              struct LrEnsemble **out);

// Number of measurements, or 0 for a null handle.
//
// # Safety
// `ens` must be null or a live ensemble handle.
size_t lr_ensemble_m(const struct LrEnsemble *ens);

// `out[i] = A(M)_i` for a column-major `d1 x d2` matrix `mat`.
//
// # Safety
// `mat` holds `mat_len` doubles; `out` has room for `out_len`.
enum LrStatus lr_ensemble_apply(const struct LrEnsemble *ens,
                                const double *mat,
                                size_t mat_len,
                                double *out,
                                size_t out_len);

// Column-major `A*(v)`.
//
// # Safety
// `v` holds `v_len` doubles; `out` has room for `out_len`.
enum LrStatus lr_ensemble_adjoint(const struct LrEnsemble *ens,
                                  const double *v,
                                  size_t v_len,
                                  double *out,
                                  size_t out_len);

// # Safety
// `ens` must be null or a handle not yet freed.
void lr_ensemble_free(struct LrEnsemble *ens);

// Sensing instance with `m = m_multiplier * r * d` measurements and additive Gaussian outliers.
//
// # Safety
// `out` must be a valid pointer location.
enum LrStatus lr_instance_sensing(enum LrEnsembleKind kind,
                                  size_t d,
                                  size_t r,
                                  double m_multiplier,
                                  double p_fail,
                                  enum LrPenalty penalty,
                                  uint64_t seed,
                                  struct LrInstance **out);

// Matrix completion with observation probability `p`.
//
// # Safety
// `out` must be a valid pointer location.
enum LrStatus lr_instance_matcomp(size_t d,
                                  size_t r,
                                  double p,
                                  enum LrPenalty penalty,
                                  uint64_t seed,
                                  struct LrInstance **out);

// Robust PCA with the entrywise l1 loss, corruption rate `tau` and unit Gaussian corruption.
//
// # Safety
// `out` must be a valid pointer location.
enum LrStatus lr_instance_rpca(size_t d,
                               size_t r,
                               double tau,
                               uint64_t seed,
                               struct LrInstance **out);

// Number of doubles in a point of this instance, or 0 for a null handle.
//
// # Safety
// `inst` must be null or a live instance handle.
size_t lr_instance_point_len(const struct LrInstance *inst);

// Number of measurements, or 0 for a null handle.
//
// # Safety
// `inst` must be null or a live instance handle.
size_t lr_instance_m(const struct LrInstance *inst);

// Writes the ground-truth point.
//
// # Safety
// `out` has room for `out_len` doubles.
enum LrStatus lr_instance_truth(const struct LrInstance *inst, double *out, size_t out_len);

// Objective value at `x`.
//
// # Safety
// `x` holds `x_len` doubles; `out` points to one writable double.
enum LrStatus lr_instance_objective(const struct LrInstance *inst,
                                    const double *x,
                                    size_t x_len,
                                    double *out);

// Subgradient at `x`, written in the point layout.
//
// # Safety
// `x` holds `x_len` doubles; `out` has room for `out_len`.
enum LrStatus lr_instance_subgradient(const struct LrInstance *inst,
                                      const double *x,
                                      size_t x_len,
                                      double *out,
                                      size_t out_len);

// Perturbed truth `X_sharp + delta ||X_sharp||_F G / ||G||_F`.
//
// # Safety
// `out` has room for `out_len` doubles.
enum LrStatus lr_initialize(const struct LrInstance *inst,
                            double delta,
                            uint64_t seed,
                            double *out,
                            size_t out_len);

// # Safety
// `inst` must be null or a handle not yet freed.
void lr_instance_free(struct LrInstance *inst);

// Runs a solver from `x0` and returns the trace.
//
// # Safety
// `spec` points to a valid spec, `x0` holds `x0_len` doubles, `out` is a valid pointer location.
enum LrStatus lr_solve(const struct LrInstance *inst,
                       const struct LrSolverSpec *spec,
                       const double *x0,
                       size_t x0_len,
                       struct LrTrace **out);

// Number of recorded iterations, or 0 for a null handle.
//
// # Safety
// `trace` must be null or a live trace handle.
size_t lr_trace_len(const struct LrTrace *trace);

// # Safety
// `trace` must be a live trace handle and `out` a writable record.
enum LrStatus lr_trace_record(const struct LrTrace *trace, size_t index, struct LrTraceRecord *out);

// # Safety
// `trace` must be a live trace handle and `out` writable.
enum LrStatus lr_trace_status(const struct LrTrace *trace, enum LrTraceStatus *out);

// Writes the last iterate.
//
// # Safety
// `out` has room for `out_len` doubles.
enum LrStatus lr_trace_final_point(const struct LrTrace *trace, double *out, size_t out_len);

// # Safety
// `trace` must be null or a handle not yet freed.
void lr_trace_free(struct LrTrace *trace);

// `min_R ||X - X_sharp R||_F` over orthogonal `R`, for column-major `d x r` inputs.
//
// # Safety
// `x` and `x_sharp` hold `d * r` doubles; `out` points to one writable double.
enum LrStatus lr_procrustes_distance(const double *x,
                                     const double *x_sharp,
                                     size_t d,
                                     size_t r,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOWRANK_H */
