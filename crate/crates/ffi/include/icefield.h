#ifndef ICEFIELD_H
#define ICEFIELD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  ICEFIELD_STATUS_OK = 0,
  ICEFIELD_STATUS_NULL_POINTER = 1,
  // Bad arguments or configuration.
  ICEFIELD_STATUS_INVALID_INPUT = 2,
  // Factorisation or solver failure.
  ICEFIELD_STATUS_NUMERICAL = 3,
  ICEFIELD_STATUS_IO = 4,
  // An internal panic was caught.
  ICEFIELD_STATUS_PANIC = 5,
  // An output buffer is shorter than required.
  ICEFIELD_STATUS_BUFFER_TOO_SMALL = 6,
} IcefieldStatus;

// A triangular mesh with its finite-element matrices.
typedef struct IcefieldMesh IcefieldMesh;

// Exact posterior of a zero-mean Matérn field given point data.
typedef struct IcefieldPosterior IcefieldPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full length including the
// terminator, so a second call with a larger buffer can get all of it.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t icefield_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *icefield_version(void);

// Meshes the polygon given by `n` vertices `(x0, y0, x1, y1, ...)` with
// target edge length `edge` and an outer extension of width `margin`.
//
// # Safety
// `xy` must hold `2 n` doubles; `out` must be writable.
IcefieldStatus icefield_mesh_build(const double *xy,
                                   size_t n,
                                   double edge,
                                   double margin,
                                   IcefieldMesh **out);

// # Safety
// `mesh` must be a live handle; `out` must be writable.
IcefieldStatus icefield_mesh_n_vertices(const IcefieldMesh *mesh, size_t *out);

// Writes vertex coordinates as `(x, y)` pairs; `len` counts doubles.
//
// # Safety
// `mesh` must be a live handle; `xy` must hold `len` doubles.
IcefieldStatus icefield_mesh_vertices(const IcefieldMesh *mesh, double *xy, size_t len);

// # Safety
// `mesh` must be null or a handle not yet freed.
void icefield_mesh_free(IcefieldMesh *mesh);

// Matérn (ν = 1) correlation at distance `d` for range `rho`.
//
// # Safety
// `out` must be writable.
IcefieldStatus icefield_matern_correlation(double rho, double d, double *out);

// Exact posterior of a zero-mean SPDE Matérn field (SD `sigma`, range
// `rho`) on `mesh`, given `n_obs` noisy point values.
//
// # Safety
// `mesh` must be a live handle; `xy` must hold `2 n_obs` doubles, `values`
// and `noise_sd` `n_obs` doubles each; `out` must be writable.
IcefieldStatus icefield_posterior_fit(const IcefieldMesh *mesh,
                                      double sigma,
                                      double rho,
                                      size_t n_obs,
                                      const double *xy,
                                      const double *values,
                                      const double *noise_sd,
                                      IcefieldPosterior **out);

// # Safety
// `post` must be a live handle; `out` must be writable.
IcefieldStatus icefield_posterior_log_marginal_likelihood(const IcefieldPosterior *post,
                                                          double *out);

// Posterior mean and SD at every mesh vertex; either output may be null.
//
// # Safety
// `post` must be a live handle; non-null outputs must hold `len` doubles.
IcefieldStatus icefield_posterior_vertices(const IcefieldPosterior *post,
                                           double *mean,
                                           double *sd,
                                           size_t len);

// Posterior mean and SD at `n` points inside the mesh; `sd` may be null.
//
// # Safety
// `post` must be a live handle; `xy` must hold `2 n` doubles and `mean`
// (and `sd` when non-null) `n` doubles.
IcefieldStatus icefield_posterior_predict(const IcefieldPosterior *post,
                                          size_t n,
                                          const double *xy,
                                          double *mean,
                                          double *sd);

// # Safety
// `post` must be null or a handle not yet freed.
void icefield_posterior_free(IcefieldPosterior *post);

// Runs a config file as the command-line tool would, writing into
// `out_dir`. `seed` overrides the file's seed when `use_seed` is true.
//
// # Safety
// `config_path` and `out_dir` must be NUL-terminated strings.
IcefieldStatus icefield_run_config(const char *config_path,
                                   const char *out_dir,
                                   bool use_seed,
                                   uint64_t seed,
                                   size_t threads);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICEFIELD_H */
