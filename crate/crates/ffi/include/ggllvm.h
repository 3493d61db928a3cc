#ifndef GGLLVM_H
#define GGLLVM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GGLLVM_OK 0

/**
 * A required pointer argument was null.
 */
#define GGLLVM_ERR_NULL 1

/**
 * An argument was out of range or inconsistent with the data.
 */
#define GGLLVM_ERR_INVALID 2

/**
 * An input file or JSON document could not be parsed.
 */
#define GGLLVM_ERR_PARSE 3

/**
 * A numerical routine failed.
 */
#define GGLLVM_ERR_NUMERICAL 4

#define GGLLVM_ERR_IO 5

#define GGLLVM_ERR_UNSUPPORTED 6

/**
 * A caller buffer is too small; the required length is reported.
 */
#define GGLLVM_ERR_BUFFER 7

/**
 * An internal panic was caught.
 */
#define GGLLVM_ERR_PANIC 8

#define GGLLVM_FAMILY_BERNOULLI 0

#define GGLLVM_FAMILY_POISSON 1

#define GGLLVM_ASSUMPTION_A2 0

#define GGLLVM_ASSUMPTION_A2PRIME 1

/**
 * Multiview network data.
 */
typedef struct GgllvmData GgllvmData;

/**
 * Result of a Laplace fit together with the labels of its data.
 */
typedef struct GgllvmFit GgllvmFit;

/**
 * Model and optimizer settings for `ggllvm_fit`.
 */
typedef struct {
  int family;
  size_t factors;
  int include_intercept;
  int assumption;
  uint64_t seed;
  size_t max_outer_iters;
  double outer_tol;
  int compute_vcov;
} GgllvmFitConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ggllvm_last_error(void);

/**
 * Library version as a static string.
 */
const char *ggllvm_version(void);

/**
 * Reads an edge-list CSV. `directed` is 0 or 1, or -1 to use the file header.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
int ggllvm_data_from_edge_list(const char *path, int family_code, int directed, GgllvmData **out);

/**
 * Builds data from `n_layers` row-major `n_nodes x n_nodes` matrices with
 * zero diagonals.
 *
 * # Safety
 * `values` must point to `n_layers * n_nodes * n_nodes` integers.
 */
int ggllvm_data_from_dense(size_t n_nodes,
                           size_t n_layers,
                           int directed,
                           const uint32_t *values,
                           GgllvmData **out);

/**
 * # Safety
 * `data` must be null or a handle from this library.
 */
size_t ggllvm_data_n_nodes(const GgllvmData *data);

/**
 * # Safety
 * `data` must be null or a handle from this library.
 */
size_t ggllvm_data_n_layers(const GgllvmData *data);

/**
 * # Safety
 * `data` must be null or a handle from this library, freed at most once.
 */
void ggllvm_data_free(GgllvmData *data);

/**
 * Defaults: Bernoulli, one factor, intercept, A2, seed 0.
 */
GgllvmFitConfig ggllvm_fit_config_default(void);

/**
 * Fits the model by Laplace-approximated maximum likelihood. A fit that
 * stops without converging still returns `GGLLVM_OK`; check
 * `ggllvm_fit_converged`.
 *
 * # Safety
 * `data` and `config` must be valid and `out` writable.
 */
int ggllvm_fit(const GgllvmData *data, const GgllvmFitConfig *config, GgllvmFit **out);

/**
 * Restores a fit from its JSON text; `data` supplies the observations.
 *
 * # Safety
 * `json` must be a valid C string, `data` a valid handle, `out` writable.
 */
int ggllvm_fit_from_json(const char *json, const GgllvmData *data, GgllvmFit **out);

/**
 * 1 when the optimizer met its convergence criterion, 0 otherwise or for null.
 *
 * # Safety
 * `fit` must be null or a valid handle.
 */
int ggllvm_fit_converged(const GgllvmFit *fit);

/**
 * Approximate log-likelihood at the estimate, or NaN for null.
 *
 * # Safety
 * `fit` must be null or a valid handle.
 */
double ggllvm_fit_loglik(const GgllvmFit *fit);

/**
 * Number of dyads (rows of the loading matrix).
 *
 * # Safety
 * `fit` must be null or a valid handle.
 */
size_t ggllvm_fit_n_dyads(const GgllvmFit *fit);

/**
 * Columns of the loading matrix (factors plus intercept).
 *
 * # Safety
 * `fit` must be null or a valid handle.
 */
size_t ggllvm_fit_n_cols(const GgllvmFit *fit);

/**
 * Copies the loadings, row-major by dyad, into `buf`. `required` (if not
 * null) receives the needed length; pass a null `buf` with `len` 0 to query.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
int ggllvm_fit_alpha(const GgllvmFit *fit, double *buf, size_t len, size_t *required);

/**
 * Copies the latent covariance, row-major `q x q`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
int ggllvm_fit_sigma(const GgllvmFit *fit, double *buf, size_t len, size_t *required);

/**
 * Copies the fitted edge means as `K` row-major `n x n` matrices.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
int ggllvm_fit_pi_hat(const GgllvmFit *fit, double *buf, size_t len, size_t *required);

/**
 * Serializes the fit as JSON. Release the string with `ggllvm_string_free`.
 *
 * # Safety
 * `fit` must be a valid handle and `out` writable.
 */
int ggllvm_fit_to_json(const GgllvmFit *fit, char **out);

/**
 * # Safety
 * `fit` must be null or a handle from this library, freed at most once.
 */
void ggllvm_fit_free(GgllvmFit *fit);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void ggllvm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GGLLVM_H */
