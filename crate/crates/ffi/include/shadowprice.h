#ifndef SHADOWPRICE_H
#define SHADOWPRICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpLossScale {
  SP_LOSS_SCALE_HALF = 0,
  SP_LOSS_SCALE_MEAN = 1,
} SpLossScale;

/**
 * Result codes. Zero is success.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  /**
   * Bad arguments, restriction syntax or configuration.
   */
  SP_STATUS_INVALID_INPUT = 2,
  /**
   * Data problems: dimensions, rank, non-finite values.
   */
  SP_STATUS_DATA = 3,
  /**
   * Solver or variance failure.
   */
  SP_STATUS_NUMERICAL = 4,
  /**
   * Output buffer has the wrong length.
   */
  SP_STATUS_BUFFER_SIZE = 5,
  SP_STATUS_PANIC = 6,
} SpStatus;

/**
 * Which parameter vector `sp_fit_vector` copies out.
 */
typedef enum SpVector {
  SP_VECTOR_UNCONSTRAINED = 0,
  SP_VECTOR_CONSTRAINED = 1,
  SP_VECTOR_DEBIASED = 2,
  SP_VECTOR_STANDARD_ERROR = 3,
  SP_VECTOR_CI_LOWER = 4,
  SP_VECTOR_CI_UPPER = 5,
  SP_VECTOR_ISP = 6,
  SP_VECTOR_ISP_STANDARD_ERROR = 7,
} SpVector;

typedef struct SpDataset SpDataset;

typedef struct SpFit SpFit;

typedef struct SpRestrictions SpRestrictions;

/**
 * Estimation settings. Start from `sp_fit_options_default`.
 */
typedef struct SpFitOptions {
  double c0;
  size_t grid_size;
  double lower_ratio;
  double level;
  double screen_level;
  enum SpLossScale loss_scale;
} SpFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * Valid until the next failing call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Build a dataset from `y[n]` and a row-major `x[n * p]`. When
 * `has_intercept` is non-zero the first column of `x` must be all ones.
 *
 * # Safety
 * `y` must point to `n` doubles, `x` to `n * p` doubles, `out` to writable
 * storage for one pointer.
 */
enum SpStatus sp_dataset_new(const double *y,
                             const double *x,
                             size_t n,
                             size_t p,
                             int32_t has_intercept,
                             struct SpDataset **out);

/**
 * # Safety
 * `data` must come from `sp_dataset_new` and not be used afterwards.
 */
void sp_dataset_free(struct SpDataset *data);

/**
 * Parse `q` restriction expressions over `p` parameters. `sigma_diag` may be
 * null (identity credibility matrix) or point to `q` positive weights.
 *
 * # Safety
 * `exprs` must point to `q` NUL-terminated strings; `sigma_diag`, when not
 * null, to `q` doubles; `out` to writable storage for one pointer.
 */
enum SpStatus sp_restrictions_new(const char *const *exprs,
                                  size_t q,
                                  size_t p,
                                  const double *sigma_diag,
                                  struct SpRestrictions **out);

/**
 * # Safety
 * `sys` must come from `sp_restrictions_new` and not be used afterwards.
 */
void sp_restrictions_free(struct SpRestrictions *sys);

struct SpFitOptions sp_fit_options_default(void);

/**
 * Run the estimator: tolerance selection, constrained solution, debiasing,
 * ISPs and the plateau cutoff. `opts` may be null for defaults.
 *
 * # Safety
 * `data` and `sys` must be live handles; `opts` null or valid; `out`
 * writable storage for one pointer.
 */
enum SpStatus sp_fit(const struct SpDataset *data,
                     const struct SpRestrictions *sys,
                     const struct SpFitOptions *opts,
                     struct SpFit **out);

/**
 * # Safety
 * `fit` must come from `sp_fit` and not be used afterwards.
 */
void sp_fit_free(struct SpFit *fit);

/**
 * Number of parameters and restrictions.
 *
 * # Safety
 * `fit` must be a live handle; `p` and `q` writable.
 */
enum SpStatus sp_fit_dims(const struct SpFit *fit, size_t *p, size_t *q);

/**
 * Selected tolerance, multiplier and the risk proxy split at it.
 *
 * # Safety
 * `fit` must be a live handle; the outputs writable.
 */
enum SpStatus sp_fit_summary(const struct SpFit *fit,
                             double *c_hat,
                             double *lambda,
                             double *risk_bias,
                             double *risk_var);

/**
 * Copy one result vector into `buf`, which must hold exactly `p` values
 * (`q` for the ISP kinds).
 *
 * # Safety
 * `fit` must be a live handle and `buf` point to `len` writable doubles.
 */
enum SpStatus sp_fit_vector(const struct SpFit *fit, enum SpVector kind, double *buf, size_t len);

/**
 * Plateau size `m_hat`, or 0 when no cutoff could be computed.
 *
 * # Safety
 * `fit` must be a live handle and `cutoff` writable.
 */
enum SpStatus sp_fit_plateau_cutoff(const struct SpFit *fit, size_t *cutoff);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOWPRICE_H */
