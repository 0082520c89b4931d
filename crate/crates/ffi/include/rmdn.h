#ifndef RMDN_H
#define RMDN_H

#include <stddef.h>
#include <stdint.h>

typedef enum RmdnStatus {
  RMDN_STATUS_OK = 0,
  RMDN_STATUS_NULL_POINTER = 1,
  RMDN_STATUS_INVALID_ARGUMENT = 2,
  RMDN_STATUS_SHAPE = 3,
  RMDN_STATUS_NUMERICAL = 4,
  RMDN_STATUS_PANIC = 5,
} RmdnStatus;

/**
 * Opaque residualization state: regression coefficients and inverse covariance.
 */
typedef struct RmdnState RmdnState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next failing call.
 */
const char *rmdn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rmdn_version(void);

/**
 * Creates a state for design width `p` (confounders, label, bias) and `h`
 * features, with inverse covariance `epsilon·I` and ridge `lambda`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RmdnStatus rmdn_state_new(size_t p,
                               size_t h,
                               double epsilon,
                               double lambda,
                               struct RmdnState **out);

/**
 * Releases a state. Null is ignored.
 *
 * # Safety
 * `state` must come from [`rmdn_state_new`] and not be used afterwards.
 */
void rmdn_state_free(struct RmdnState *state);

/**
 * Absorbs one design row `x` (length p) and feature row `z` (length h).
 *
 * # Safety
 * `x` and `z` must point to `p` and `h` doubles.
 */
enum RmdnStatus rmdn_state_update_sample(struct RmdnState *state, const double *x, const double *z);

/**
 * Absorbs a batch: `x` is rows×p, `z` is rows×h.
 *
 * # Safety
 * `x` and `z` must point to `rows·p` and `rows·h` doubles.
 */
enum RmdnStatus rmdn_state_update_batch(struct RmdnState *state,
                                        const double *x,
                                        const double *z,
                                        size_t rows);

/**
 * Writes `z − x̃·β_x` to `out` (rows×h). `confounders` is rows×(p−2).
 *
 * # Safety
 * Buffers must hold `rows·(p−2)`, `rows·h` and `rows·h` doubles.
 */
enum RmdnStatus rmdn_state_residualize(const struct RmdnState *state,
                                       const double *confounders,
                                       const double *z,
                                       size_t rows,
                                       double *out);

/**
 * Design width `p` and feature count `h`.
 *
 * # Safety
 * `p` and `h` must be valid writable pointers.
 */
enum RmdnStatus rmdn_state_dims(const struct RmdnState *state, size_t *p, size_t *h);

/**
 * Number of samples absorbed so far.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum RmdnStatus rmdn_state_n_seen(const struct RmdnState *state, uint64_t *out);

/**
 * Copies β (p×h) into `out`, which must hold `len >= p·h` doubles.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum RmdnStatus rmdn_state_beta(const struct RmdnState *state, double *out, size_t len);

/**
 * Copies the inverse covariance (p×p) into `out`, which must hold `len >= p·p` doubles.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum RmdnStatus rmdn_state_p_inv(const struct RmdnState *state, double *out, size_t len);

/**
 * Squared distance correlation between `x` (n×dx) and `y` (n×dy).
 *
 * # Safety
 * `x` and `y` must hold `n·dx` and `n·dy` doubles; `out` must be writable.
 */
enum RmdnStatus rmdn_dcor2(const double *x,
                           size_t dx,
                           const double *y,
                           size_t dy,
                           size_t n,
                           double *out);

/**
 * Distances of an S×S accuracy matrix `r` from the per-stage maxima `a`.
 *
 * # Safety
 * `r` must hold `stages²` doubles, `a` `stages` doubles; outputs must be writable.
 */
enum RmdnStatus rmdn_transfer_distance(const double *r,
                                       const double *a,
                                       size_t stages,
                                       double *accd,
                                       double *bwtd,
                                       double *fwtd);

/**
 * Best achievable accuracy when the two groups' main-effect intensities are
 * uniform on `[low1, high1]` and `[low2, high2]`.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum RmdnStatus rmdn_theoretical_max(double low1,
                                     double high1,
                                     double low2,
                                     double high2,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMDN_H */
