/* C ABI for the groupslab library. See gs_last_error() for error text. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_ARGUMENT = 2,
  GS_STATUS_DIMENSION = 3,
  GS_STATUS_NOT_POSITIVE_DEFINITE = 4,
  GS_STATUS_BUDGET_EXCEEDED = 5,
  GS_STATUS_NUMERIC = 6,
  GS_STATUS_IO = 7,
  GS_STATUS_PARSE = 8,
  GS_STATUS_UTF8 = 9,
  GS_STATUS_PANIC = 10,
} GsStatus;

// Move families addressable through [`gs_chain_acceptance_rate`].
typedef enum GsMoveKind {
  GS_MOVE_KIND_BIRTH = 0,
  GS_MOVE_KIND_DEATH = 1,
  GS_MOVE_KIND_SWAP = 2,
  GS_MOVE_KIND_BETA = 3,
  GS_MOVE_KIND_SIGMA_EIGENVALUE = 4,
  GS_MOVE_KIND_SIGMA_BASIS = 5,
  GS_MOVE_KIND_SIGMA_GIBBS = 6,
} GsMoveKind;

// Opaque finished chain: kept samples and diagnostics.
typedef struct GsChain GsChain;

// Opaque dataset.
typedef struct GsDataset GsDataset;

// Opaque group structure.
typedef struct GsGroups GsGroups;

// Opaque mixture posterior.
typedef struct GsMixture GsMixture;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread, or null when no error occurred.
// The pointer stays valid until the next failing call on the thread.
const char *gs_last_error(void);

// Library version as a static string.
const char *gs_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must have been returned by a groupslab function documented to
// require `gs_string_free`, and must not be used afterward.
void gs_string_free(char *s);

// Creates a group structure from `count` positive group sizes.
//
// # Safety
// `sizes` must point to `count` readable values; `out` must be writable.
enum GsStatus gs_groups_new(const uintptr_t *sizes, uintptr_t count, struct GsGroups **out);

// # Safety
// `groups` must come from `gs_groups_new` and not be used afterward.
void gs_groups_free(struct GsGroups *groups);

// Total number of predictor columns covered by the groups.
//
// # Safety
// `groups` must be a live handle.
uintptr_t gs_groups_num_predictors(const struct GsGroups *groups);

// Creates a dataset from row-major `x` (n x p) and `y` (n x d).
//
// # Safety
// `x` and `y` must point to `n*p` and `n*d` readable doubles; `out` must
// be writable.
enum GsStatus gs_dataset_new(const double *x,
                             uintptr_t n,
                             uintptr_t p,
                             const double *y,
                             uintptr_t d,
                             struct GsDataset **out);

// # Safety
// `dataset` must come from `gs_dataset_new` and not be used afterward.
void gs_dataset_free(struct GsDataset *dataset);

// Gaussian log-likelihood of row-major `beta` (p x d) and `sigma` (d x d).
//
// # Safety
// All pointers must be live and correctly sized; `out` must be writable.
enum GsStatus gs_log_likelihood(const struct GsDataset *dataset,
                                const double *beta,
                                const double *sigma,
                                double *out);

// Renyi-1/2 divergence split into covariance and mean terms.
//
// # Safety
// All pointers must be live and correctly sized; outputs writable.
enum GsStatus gs_renyi_half(const struct GsDataset *dataset,
                            const double *beta,
                            const double *sigma,
                            const double *beta0,
                            const double *sigma0,
                            double *out_cov,
                            double *out_mean,
                            double *out_total);

// Squared restricted eigenvalue `phi_l2^2(s~)`; `out_exact` reports
// whether enumeration was exhaustive.
//
// # Safety
// Handles must be live; outputs writable.
enum GsStatus gs_restricted_eigenvalue(const struct GsDataset *dataset,
                                       const struct GsGroups *groups,
                                       uintptr_t s_tilde,
                                       double *out_value,
                                       bool *out_exact);

// Squared l2,1 compatibility number `phi_l21^2(s~)`.
//
// # Safety
// Handles must be live; outputs writable.
enum GsStatus gs_compatibility_number(const struct GsDataset *dataset,
                                      const struct GsGroups *groups,
                                      uintptr_t s_tilde,
                                      double *out_value,
                                      bool *out_exact);

// Runs the MCMC sampler. `config_json` (optional) holds
// `{"hyper": {...}, "sampler": {...}}` in the CLI config schema;
// `sigma0` (optional, row-major d x d) fixes the covariance;
// `chain_path` (optional) streams kept samples as JSONL to that file.
// On success `out` receives a chain handle with diagnostics and samples.
//
// # Safety
// Handles must be live, strings NUL-terminated, `out` writable.
enum GsStatus gs_run_chain(const struct GsDataset *dataset,
                           const struct GsGroups *groups,
                           const char *config_json,
                           const double *sigma0,
                           const char *chain_path,
                           struct GsChain **out);

// # Safety
// `chain` must come from `gs_run_chain` and not be used afterward.
void gs_chain_free(struct GsChain *chain);

// Number of kept samples.
//
// # Safety
// `chain` must be a live handle.
uintptr_t gs_chain_kept(const struct GsChain *chain);

// Effective sample size of the log-likelihood series.
//
// # Safety
// `chain` must be a live handle.
double gs_chain_ess_loglik(const struct GsChain *chain);

// Acceptance rate of one move family (0 when never attempted).
//
// # Safety
// `chain` must be a live handle.
double gs_chain_acceptance_rate(const struct GsChain *chain, enum GsMoveKind kind);

// Posterior mean of the coefficient matrix over kept samples, written to
// a row-major `p x d` buffer.
//
// # Safety
// `chain` must be live; `out` must hold `p*d` writable doubles.
enum GsStatus gs_chain_posterior_mean(const struct GsChain *chain,
                                      uintptr_t p,
                                      uintptr_t d,
                                      double *out);

// Builds the exact mixture posterior at a known covariance.
// `hyper_json` (optional) matches the CLI `hyper` schema.
//
// # Safety
// Handles must be live; `sigma0` must hold `d*d` doubles; `out` writable.
enum GsStatus gs_mixture_build(const struct GsDataset *dataset,
                               const struct GsGroups *groups,
                               const double *sigma0,
                               const char *hyper_json,
                               uintptr_t s_cap,
                               struct GsMixture **out);

// # Safety
// `mixture` must come from `gs_mixture_build` and not be used afterward.
void gs_mixture_free(struct GsMixture *mixture);

// Number of mixture components.
//
// # Safety
// `mixture` must be a live handle.
uintptr_t gs_mixture_num_components(const struct GsMixture *mixture);

// Weight of the support given as `count` (column, group) pairs; 0 when
// the support was not enumerated.
//
// # Safety
// `mixture` must be live; `pairs` must hold `2*count` readable values;
// `out` writable.
enum GsStatus gs_mixture_weight_of(const struct GsMixture *mixture,
                                   const uintptr_t *pairs,
                                   uintptr_t count,
                                   double *out);

// Serializes the mixture as JSON; free with [`gs_string_free`].
//
// # Safety
// `mixture` must be live; `out` writable.
enum GsStatus gs_mixture_export_json(const struct GsMixture *mixture, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
