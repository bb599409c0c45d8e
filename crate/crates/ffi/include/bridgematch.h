#ifndef BRIDGEMATCH_H
#define BRIDGEMATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum BmStatus {
  BM_STATUS_OK = 0,
  BM_STATUS_NULL_POINTER = 1,
  BM_STATUS_INVALID_ARGUMENT = 2,
  BM_STATUS_DIMENSION_MISMATCH = 3,
  BM_STATUS_PARSE = 4,
  BM_STATUS_IO = 5,
  BM_STATUS_NUMERICAL = 6,
  BM_STATUS_PANIC = 7,
} BmStatus;

/**
 * Sampler integrators.
 */
typedef enum BmIntegrator {
  BM_INTEGRATOR_BRIDGE_POSTERIOR = 0,
  BM_INTEGRATOR_EULER_MARUYAMA = 1,
} BmIntegrator;

/**
 * A loaded checkpoint. Opaque to C.
 */
typedef struct BmCheckpoint BmCheckpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *bm_last_error_message(void);

/**
 * Load a checkpoint file. Free the handle with [`bm_checkpoint_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BmStatus bm_checkpoint_load(const char *path, struct BmCheckpoint **out);

/**
 * Parse a checkpoint from its text form.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BmStatus bm_checkpoint_parse(const char *text, struct BmCheckpoint **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not be freed twice.
 */
void bm_checkpoint_free(struct BmCheckpoint *handle);

/**
 * State dimension of the model, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t bm_checkpoint_state_dim(const struct BmCheckpoint *handle);

/**
 * Conditioning dimension of the model (0 when unconditioned).
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t bm_checkpoint_cond_dim(const struct BmCheckpoint *handle);

/**
 * Bridge noise scale the model was trained with, or NaN for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
double bm_checkpoint_sigma(const struct BmCheckpoint *handle);

/**
 * Endpoint prediction at one state. `x_t` and `out` have `state_dim`
 * entries; `cond` has `cond_dim` entries and may be null when that is 0.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum BmStatus bm_checkpoint_predict(const struct BmCheckpoint *handle,
                                    const double *x_t,
                                    const double *cond,
                                    double t,
                                    double *out);

/**
 * Integrate `n` paths from the rows of `x0` (`n * state_dim` values) and
 * write the endpoints to `x1`. `integrator` is a [`BmIntegrator`] value.
 * Matches `bm sample` for the same seed and initial points.
 *
 * # Safety
 * Pointers must be valid for `n * state_dim` values.
 */
enum BmStatus bm_checkpoint_sample_endpoints(const struct BmCheckpoint *handle,
                                             const double *x0,
                                             size_t n,
                                             size_t num_steps,
                                             uint32_t integrator,
                                             uint64_t seed,
                                             double *x1);

/**
 * Fixed point of the projected Gaussian correlation for noise `sigma`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BmStatus bm_alpha_star(double sigma, double *out);

/**
 * Correlation of the Markovian projection of the unit Gaussian coupling
 * with correlation `alpha`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BmStatus bm_f_alpha(double alpha, double sigma, double *out);

/**
 * Energy distance between `na` and `nb` points of dimension `dim`.
 *
 * # Safety
 * `a` and `b` must be valid for `na * dim` and `nb * dim` values.
 */
enum BmStatus bm_energy_distance(const double *a,
                                 size_t na,
                                 const double *b,
                                 size_t nb,
                                 size_t dim,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRIDGEMATCH_H */
