#ifndef PSEUDOHERM_H
#define PSEUDOHERM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PhStatus {
  PH_STATUS_OK = 0,
  PH_STATUS_NULL_POINTER = 1,
  PH_STATUS_INVALID_UTF8 = 2,
  PH_STATUS_INVALID_ARGUMENT = 3,
  PH_STATUS_OUT_OF_SCOPE = 4,
  PH_STATUS_NUMERICAL = 5,
  PH_STATUS_IO = 6,
  PH_STATUS_BUFFER_TOO_SMALL = 7,
  PH_STATUS_PANIC = 8,
} PhStatus;

/**
 * A pseudo-Hermitian curvature tensor on `R^{2d}` in the adapted frame.
 */
typedef struct PhCurvature PhCurvature;

/**
 * A Lie-algebraic model together with its curvature.
 */
typedef struct PhModel PhModel;

typedef struct PhConstants {
  size_t d;
  double scalar;
  /**
   * NaN when the scalar curvature vanishes.
   */
  double c0_prime;
  double kappa;
  double cm_norm2;
  bool pseudo_einstein;
} PhConstants;

typedef struct PhRanges {
  double sectional_min;
  double sectional_max;
  double holomorphic_min;
  double holomorphic_max;
  double complex_sectional_min;
  double complex_sectional_max;
} PhRanges;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *ph_last_error(void);

const char *ph_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void ph_string_free(char *s);

/**
 * Builds a model of `family` (e.g. `"su_pq"`) with `n_params` parameters.
 *
 * # Safety
 * `family` must be a NUL-terminated string, `params` must point to `n_params`
 * values (or be null when `n_params` is 0), and `out` must be writable.
 */
enum PhStatus ph_model_new(const char *family,
                           const size_t *params,
                           size_t n_params,
                           struct PhModel **out);

/**
 * # Safety
 * `m` must be null or a handle from [`ph_model_new`], freed at most once.
 */
void ph_model_free(struct PhModel *m);

/**
 * Half-dimension `d` of the model's horizontal space, 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live model handle.
 */
size_t ph_model_half_dim(const struct PhModel *m);

/**
 * Copies the model's curvature into a new handle.
 *
 * # Safety
 * `m` must be a live model handle and `out` writable.
 */
enum PhStatus ph_model_curvature(const struct PhModel *m, struct PhCurvature **out);

/**
 * Complex hyperbolic (or projective) space form with scalar curvature `s`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PhStatus ph_space_form_new(size_t d, double s, struct PhCurvature **out);

/**
 * Curvature of the model with parallel torsion and scalar curvature `s`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PhStatus ph_torsion_model_new(size_t d, double s, struct PhCurvature **out);

/**
 * # Safety
 * `c` must be null or a curvature handle, freed at most once.
 */
void ph_curvature_free(struct PhCurvature *c);

/**
 * Real dimension `2d` of the horizontal space, 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live curvature handle.
 */
size_t ph_curvature_dim(const struct PhCurvature *c);

/**
 * Copies the `(2d)^4` components, row-major in `(a, b, c, d)`, into `buf`.
 *
 * # Safety
 * `c` must be a live curvature handle and `buf` must hold `len` doubles.
 */
enum PhStatus ph_curvature_components(const struct PhCurvature *c, double *buf, size_t len);

/**
 * Scalar curvature, rigidity constants and Chern-Moser norm.
 *
 * # Safety
 * `c` must be a live curvature handle and `out` writable.
 */
enum PhStatus ph_curvature_constants(const struct PhCurvature *c, struct PhConstants *out);

/**
 * Ranges of sectional, holomorphic sectional and complex sectional curvature
 * over `samples` seeded random planes.
 *
 * # Safety
 * `c` must be a live curvature handle and `out` writable.
 */
enum PhStatus ph_curvature_sample(const struct PhCurvature *c,
                                  size_t samples,
                                  uint64_t seed,
                                  struct PhRanges *out);

/**
 * Runs a report from a JSON configuration (for example
 * `{"command":"verify","seeds":[0,1]}`; omitted fields take their defaults)
 * and returns the report document and the process-style exit code (0 pass, 1 fail).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_report` and `out_exit` writable.
 */
enum PhStatus ph_run_json(const char *config_json, char **out_report, int32_t *out_exit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEUDOHERM_H */
