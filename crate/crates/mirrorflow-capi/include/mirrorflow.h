#ifndef MIRRORFLOW_H
#define MIRRORFLOW_H

/* Generated by cbindgen from mirrorflow-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every API function.
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_ARGUMENT = 2,
  MF_STATUS_DIMENSION_MISMATCH = 3,
  MF_STATUS_DOMAIN_VIOLATION = 4,
  MF_STATUS_BLOW_UP = 5,
  MF_STATUS_NON_CONVERGENCE = 6,
  MF_STATUS_NOT_REGULAR = 7,
  MF_STATUS_CONFIG = 8,
  MF_STATUS_IO = 9,
  MF_STATUS_PANIC = 10,
} MfStatus;

// Opaque Legendre-function handle.
typedef struct MfLegendre MfLegendre;

// Opaque parametrization handle: a built-in family plus its declarative
// spec (kept so induced potentials can be derived from it).
typedef struct MfParametrization MfParametrization;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mf_version(void);

// Copy the last error message for this thread into `buf` (NUL-terminated,
// truncated to `cap` bytes). Returns the full message length in bytes,
// excluding the terminator, regardless of truncation; call with cap 0 to
// size a buffer.
size_t mf_last_error(char *buf, size_t cap);

// Build a parametrization from a JSON spec, e.g.
// `{"family":"uv_square","d":4}` or `{"family":"uut","d":2,"r":1}`.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
enum MfStatus mf_parametrization_from_json(const char *spec_json, struct MfParametrization **out);

// Release a parametrization handle (null is a no-op).
//
// # Safety
// `h` must be a pointer returned by `mf_parametrization_from_json`.
void mf_parametrization_free(struct MfParametrization *h);

// Report the x-space and w-space dimensions of a parametrization.
//
// # Safety
// All pointers must be valid.
enum MfStatus mf_parametrization_dims(const struct MfParametrization *h,
                                      size_t *dim_x,
                                      size_t *dim_w);

// Evaluate w = G(x). `x` has length dim_x, `w_out` length dim_w.
//
// # Safety
// Buffers must match the declared lengths.
enum MfStatus mf_parametrization_eval(const struct MfParametrization *h,
                                      const double *x,
                                      size_t x_len,
                                      double *w_out,
                                      size_t w_len);

// Build a Legendre function from a JSON potential spec, e.g.
// `{"kind":"hypentropy","u0":[0.5,0.5],"v0":[0.5,0.5]}` or
// `{"kind":"entropy","x0":[1.0,1.0]}`. For `{"kind":"induced"}`, pass the
// parametrization handle and its initialization; standalone kinds accept
// null for both.
//
// # Safety
// `potential_json` and `out` must be valid; `x_init` must have `x_len`
// readable doubles when non-null.
enum MfStatus mf_legendre_from_json(const char *potential_json,
                                    const struct MfParametrization *param,
                                    const double *x_init,
                                    size_t x_len,
                                    struct MfLegendre **out);

// Release a Legendre handle (null is a no-op).
//
// # Safety
// `h` must be a pointer returned by `mf_legendre_from_json`.
void mf_legendre_free(struct MfLegendre *h);

// Dimension of the Legendre function's primal space.
//
// # Safety
// All pointers must be valid.
enum MfStatus mf_legendre_dim(const struct MfLegendre *h, size_t *d);

// R(w).
//
// # Safety
// Buffers must match the potential's dimension.
enum MfStatus mf_legendre_value(const struct MfLegendre *h,
                                const double *w,
                                size_t len,
                                double *out);

// grad R(w), written to `out` (length = dimension).
//
// # Safety
// Buffers must match the potential's dimension.
enum MfStatus mf_legendre_grad(const struct MfLegendre *h,
                               const double *w,
                               size_t len,
                               double *out);

// Bregman divergence D_R(w, w_ref).
//
// # Safety
// Both vectors must have the potential's dimension.
enum MfStatus mf_legendre_bregman(const struct MfLegendre *h,
                                  const double *w,
                                  const double *w_ref,
                                  size_t len,
                                  double *out);

// Minimum-potential interpolant for Z w = y: writes w* (length d) and the
// KKT residual. `z` is row-major n x d with n < d.
//
// # Safety
// Buffer lengths must match the stated shapes.
enum MfStatus mf_kkt_oracle(const struct MfLegendre *h,
                            const double *z,
                            size_t n,
                            size_t d,
                            const double *y,
                            double *w_out,
                            double *residual_out);

// Integrate gradient flow on x for the regression loss 0.5 ||Z G(x) - y||^2
// up to `t_final` and write the final w = G(x(t_final)). `z` is row-major
// n x d. Tolerances <= 0 fall back to 1e-10.
//
// # Safety
// Buffer lengths must match the stated shapes.
enum MfStatus mf_gradient_flow_regression(const struct MfParametrization *h,
                                          const double *z,
                                          size_t n,
                                          size_t d,
                                          const double *y,
                                          const double *x_init,
                                          size_t x_len,
                                          double t_final,
                                          double abs_tol,
                                          double rel_tol,
                                          double *w_out);

// Run a config-driven experiment exactly like the CLI would.
// `subcommand` is one of check-commuting, simulate, equivalence, bias,
// loop-test, legendre-probe, domain-probe. `out_dir` may be null (the
// config decides); `seed` < 0 keeps the config's seed. On success
// `exit_code_out` receives 0 (pass) or 2 (a quantitative check failed);
// execution errors return a non-Ok status instead.
//
// # Safety
// String pointers must be NUL-terminated; `exit_code_out` must be valid.
enum MfStatus mf_run_config(const char *subcommand,
                            const char *config_path,
                            const char *out_dir,
                            long long seed,
                            int *exit_code_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MIRRORFLOW_H */
