#ifndef PHRESERVOIR_H
#define PHRESERVOIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PhrStatus {
  PHR_STATUS_OK = 0,
  PHR_STATUS_NULL_POINTER = 1,
  PHR_STATUS_INVALID_ARGUMENT = 2,
  PHR_STATUS_DATA_ERROR = 3,
  PHR_STATUS_NUMERICAL_ERROR = 4,
  PHR_STATUS_PANIC = 5,
} PhrStatus;

// Opaque fitted or loaded model.
typedef struct PhrModel PhrModel;

// Opaque Moran storage chain.
typedef struct PhrMoran PhrMoran;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Owned by the
// library; valid until the next failing call on the same thread.
const char *phr_last_error(void);

// Built-in model by name ("two-regime-poisson", "three-regime-exponential").
//
// # Safety
// `name` must be a NUL-terminated string; `out` a writable pointer.
enum PhrStatus phr_model_preset(const char *name, struct PhrModel **out_model);

// Parse and validate a JSON model file.
//
// # Safety
// `json` must be a NUL-terminated string; `out_model` a writable pointer.
enum PhrStatus phr_model_from_json(const char *json, struct PhrModel **out_model);

// Serialize a model to JSON. Release the string with [`phr_string_free`].
//
// # Safety
// `model` must come from this library; `out_json` a writable pointer.
enum PhrStatus phr_model_to_json(const struct PhrModel *model, char **out_json);

// # Safety
// `s` must be NULL or a string returned by this library.
void phr_string_free(char *s);

// # Safety
// `model` must be NULL or a handle from this library, freed at most once.
void phr_model_free(struct PhrModel *model);

// Number of regimes and total number of extended (regime, phase) states.
//
// # Safety
// `model` must come from this library; outputs must be writable.
enum PhrStatus phr_model_dimensions(const struct PhrModel *model,
                                    size_t *out_regimes,
                                    size_t *out_states);

// Log-likelihood of `n` observations.
//
// # Safety
// `obs` must point to `n` doubles; `out_loglik` must be writable.
enum PhrStatus phr_model_loglik(const struct PhrModel *model,
                                const double *obs,
                                size_t n,
                                double *out_loglik);

// Fit by EM. `layout` holds `regimes` phase counts; `families` is a
// comma-separated list of one family per regime, or one for all
// ("poisson", "exponential", "degenerate:V", "categorical:A|B").
//
// # Safety
// Array arguments must hold the stated number of elements; outputs must
// be writable.
enum PhrStatus phr_fit(const double *obs,
                       size_t n,
                       const size_t *layout,
                       size_t regimes,
                       const char *families,
                       size_t restarts,
                       uint64_t seed,
                       struct PhrModel **out_model,
                       double *out_loglik);

// Moran chain from the model's stationary inflow law. `max_states = 0`
// keeps the full `floor(capacity / omega) + 1` states.
//
// # Safety
// `model` must come from this library; `out_moran` must be writable.
enum PhrStatus phr_moran_from_model(const struct PhrModel *model,
                                    double omega,
                                    double capacity,
                                    size_t max_states,
                                    double zero_band,
                                    struct PhrMoran **out_moran);

// # Safety
// `moran` must be NULL or a handle from this library, freed at most once.
void phr_moran_free(struct PhrMoran *moran);

// # Safety
// `moran` must come from this library; `out_states` must be writable.
enum PhrStatus phr_moran_states(const struct PhrMoran *moran, size_t *out_states);

// Copy the transition matrix row-major into `buf`, which must hold
// `states * states` doubles.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum PhrStatus phr_moran_matrix(const struct PhrMoran *moran, double *buf, size_t len);

// `R_v(n)`: probability of never emptying within `n` steps from state `v`.
//
// # Safety
// `moran` must come from this library; `out_value` must be writable.
enum PhrStatus phr_moran_reliability(const struct PhrMoran *moran,
                                     size_t v,
                                     size_t n,
                                     double *out_value);

// `A_v(n)`: probability of being non-empty at step `n` from state `v`.
//
// # Safety
// `moran` must come from this library; `out_value` must be writable.
enum PhrStatus phr_moran_availability(const struct PhrMoran *moran,
                                      size_t v,
                                      size_t n,
                                      double *out_value);

// Mean time to empty from state `v`.
//
// # Safety
// `moran` must come from this library; `out_value` must be writable.
enum PhrStatus phr_moran_mttf(const struct PhrMoran *moran, size_t v, double *out_value);

// Bootstrap forecast from the model's initial law. `out_mean` holds
// `horizon` doubles; `out_quantiles` holds `horizon * n_levels`, row-major
// by step.
//
// # Safety
// Arrays must hold the stated number of elements.
enum PhrStatus phr_forecast(const struct PhrModel *model,
                            size_t horizon,
                            size_t replicates,
                            uint64_t seed,
                            const double *levels,
                            size_t n_levels,
                            double *out_mean,
                            double *out_quantiles);

// Sample a path of `n` steps from stream 0 of `seed`. `out_regimes` may be
// NULL.
//
// # Safety
// `out_signals` must hold `n` doubles and `out_regimes`, when given, `n`
// sizes.
enum PhrStatus phr_simulate_path(const struct PhrModel *model,
                                 size_t n,
                                 uint64_t seed,
                                 double *out_signals,
                                 size_t *out_regimes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHRESERVOIR_H */
