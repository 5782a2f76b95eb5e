#ifndef BNN_HMC_H
#define BNN_HMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum BnnHmcStatus {
  BNN_HMC_STATUS_OK = 0,
  BNN_HMC_STATUS_NULL_POINTER = 1,
  BNN_HMC_STATUS_INVALID_ARGUMENT = 2,
  BNN_HMC_STATUS_DIMENSION_MISMATCH = 3,
  BNN_HMC_STATUS_INVALID_JSON = 4,
  // The trajectory left the finite range; outputs hold the last finite
  // state.
  BNN_HMC_STATUS_DIVERGENT = 5,
  // A Rust panic was caught. The handle involved should be freed.
  BNN_HMC_STATUS_INTERNAL = 6,
} BnnHmcStatus;

typedef enum BnnHmcActivation {
  BNN_HMC_ACTIVATION_SIGMOID = 0,
  BNN_HMC_ACTIVATION_RELU = 1,
  BNN_HMC_ACTIVATION_LEAKY_RELU = 2,
  BNN_HMC_ACTIVATION_TANH = 3,
} BnnHmcActivation;

// Opaque result of a finished chain.
typedef struct BnnHmcChain BnnHmcChain;

// Opaque posterior: architecture, data and prior/noise scales.
typedef struct BnnHmcPosterior BnnHmcPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes, excluding the terminator; 0 means no error.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t bnn_hmc_last_error_message(char *buf, size_t len);

// Builds a posterior over a fully connected network.
//
// `layer_dims` has `n_layers` entries, input width first. `inputs` holds
// `n_points · layer_dims[0]` values and `targets` `n_points ·
// layer_dims[n_layers-1]`, both row-major.
//
// # Safety
// Array pointers must be valid for the stated lengths and `out` must be a
// valid pointer to a handle slot.
enum BnnHmcStatus bnn_hmc_posterior_new(const size_t *layer_dims,
                                        size_t n_layers,
                                        enum BnnHmcActivation activation,
                                        const double *inputs,
                                        const double *targets,
                                        size_t n_points,
                                        double prior_scale,
                                        double noise_scale,
                                        struct BnnHmcPosterior **out);

// Builds a posterior from its JSON document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid handle slot.
enum BnnHmcStatus bnn_hmc_posterior_from_json(const char *json, struct BnnHmcPosterior **out);

// # Safety
// `post` must be null or a handle from this library, not yet freed.
void bnn_hmc_posterior_free(struct BnnHmcPosterior *post);

// Number of network parameters, or 0 for a null handle.
//
// # Safety
// `post` must be null or a live handle.
size_t bnn_hmc_posterior_dim(const struct BnnHmcPosterior *post);

// Potential energy `U(q)`.
//
// # Safety
// `q` must hold `dim` values and `out` must be valid.
enum BnnHmcStatus bnn_hmc_potential(const struct BnnHmcPosterior *post,
                                    const double *q,
                                    size_t dim,
                                    double *out);

// Gradient of `U` at `q`, written to `grad` (`dim` values).
//
// # Safety
// `q` and `grad` must hold `dim` values.
enum BnnHmcStatus bnn_hmc_grad_potential(const struct BnnHmcPosterior *post,
                                         const double *q,
                                         size_t dim,
                                         double *grad);

// Runs `n_steps` leapfrog steps from `(q, p)` in place.
//
// On return `q` and `p` hold the end state, `delta_h` the energy change
// and `n_crossings` (if not null) the number of kink crossings. Returns
// `Divergent` if the trajectory blew up.
//
// # Safety
// `q` and `p` must hold `dim` values; `delta_h` must be valid.
enum BnnHmcStatus bnn_hmc_trajectory(const struct BnnHmcPosterior *post,
                                     double *q,
                                     double *p,
                                     size_t dim,
                                     double step_size,
                                     size_t n_steps,
                                     double *delta_h,
                                     size_t *n_crossings);

// Runs a Metropolis-adjusted HMC chain from `init` with fixed step count.
//
// # Safety
// `init` must hold `dim` values and `out` must be a valid handle slot.
enum BnnHmcStatus bnn_hmc_chain_run(const struct BnnHmcPosterior *post,
                                    const double *init,
                                    size_t dim,
                                    double step_size,
                                    size_t n_steps,
                                    size_t n_samples,
                                    size_t burn_in,
                                    uint64_t seed,
                                    struct BnnHmcChain **out);

// # Safety
// `chain` must be null or a live chain handle.
void bnn_hmc_chain_free(struct BnnHmcChain *chain);

// Fraction of accepted proposals, burn-in included; NaN for a null handle.
//
// # Safety
// `chain` must be null or a live chain handle.
double bnn_hmc_chain_acceptance_rate(const struct BnnHmcChain *chain);

// # Safety
// `chain` must be null or a live chain handle.
size_t bnn_hmc_chain_n_divergent(const struct BnnHmcChain *chain);

// # Safety
// `chain` must be null or a live chain handle.
size_t bnn_hmc_chain_n_samples(const struct BnnHmcChain *chain);

// Copies the samples row-major into `buf`, which must hold exactly
// `n_samples · dim` values.
//
// # Safety
// `buf` must be valid for `len` values.
enum BnnHmcStatus bnn_hmc_chain_copy_samples(const struct BnnHmcChain *chain,
                                             double *buf,
                                             size_t len);

// Limiting acceptance `2Φ(−l^order·√Σ/2)` for integrator order 1 or 2.
//
// # Safety
// `out` must be valid.
enum BnnHmcStatus bnn_hmc_acceptance_limit(uint32_t order, double l, double sigma, double *out);

// Maximiser of the limiting efficiency `l·a(l)`: writes the optimal `l`,
// acceptance and efficiency. Any output pointer may be null.
//
// # Safety
// Non-null outputs must be valid.
enum BnnHmcStatus bnn_hmc_efficiency_optimum(uint32_t order,
                                             double sigma,
                                             double *l_opt,
                                             double *a_opt,
                                             double *efficiency_opt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BNN_HMC_H */
