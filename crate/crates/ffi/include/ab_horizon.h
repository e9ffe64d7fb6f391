#ifndef AB_HORIZON_H
#define AB_HORIZON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AbhStatus {
  ABH_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ABH_STATUS_NULL_POINTER = 1,
  /**
   * An argument is outside its domain or inconsistent with the data.
   */
  ABH_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed input file or string.
   */
  ABH_STATUS_PARSE = 3,
  ABH_STATUS_IO = 4,
  /**
   * The data cannot support the requested fit.
   */
  ABH_STATUS_UNFIT = 5,
  /**
   * An internal panic was caught.
   */
  ABH_STATUS_PANIC = 6,
} AbhStatus;

typedef enum AbhFitMethod {
  ABH_FIT_METHOD_MLE = 0,
  ABH_FIT_METHOD_REGRESSION = 1,
} AbhFitMethod;

/**
 * Incremental construction of [`AbhData`].
 */
typedef struct AbhBuilder AbhBuilder;

/**
 * Trigger data of one experiment arm.
 */
typedef struct AbhData AbhData;

/**
 * Hyperparameters `(β, σ, c, r)`.
 */
typedef struct AbhParams {
  double beta;
  double sigma;
  double c;
  double r;
} AbhParams;

/**
 * A point prediction with its central credible interval.
 */
typedef struct AbhInterval {
  double mean;
  double lo;
  double hi;
} AbhInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread; empty after a success.
 * Never null.
 */
const char *abh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *abh_version(void);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void abh_string_free(char *s);

/**
 * New empty builder. Never null.
 */
struct AbhBuilder *abh_builder_new(void);

/**
 * Record `count` triggers of `user` on `day` (1-based). Repeated
 * `(day, user)` pairs are summed; zero counts are ignored.
 *
 * # Safety
 * `builder` must be a live builder; `user` a NUL-terminated string.
 */
enum AbhStatus abh_builder_add(struct AbhBuilder *builder,
                               uint32_t day,
                               const char *user,
                               uint64_t count);

/**
 * Finish a builder. `days = 0` takes the last day seen. The builder is
 * consumed whether or not this succeeds.
 *
 * # Safety
 * `builder` must be a live builder; `out` must be writable.
 */
enum AbhStatus abh_builder_build(struct AbhBuilder *builder, uint32_t days, struct AbhData **out);

/**
 * Discard a builder without building. Null is ignored.
 *
 * # Safety
 * `builder` must be null or a live builder.
 */
void abh_builder_free(struct AbhBuilder *builder);

/**
 * Load long-format CSV (`day,user,count`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AbhStatus abh_data_load_csv(const char *path, struct AbhData **out);

/**
 * Draw `days` days from the model with the urn scheme.
 *
 * # Safety
 * `params` must be readable and `out` writable.
 */
enum AbhStatus abh_data_simulate(const struct AbhParams *params,
                                 uint32_t days,
                                 uint64_t seed,
                                 struct AbhData **out);

/**
 * Release a data handle. Null is ignored.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
void abh_data_free(struct AbhData *data);

/**
 * Number of days covered; 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
uint32_t abh_data_days(const struct AbhData *data);

/**
 * Number of distinct users; 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
uint64_t abh_data_n_users(const struct AbhData *data);

/**
 * Fit hyperparameters on the first `pilot_days` days with default search
 * settings. `converged` may be null. A non-converged fit still succeeds
 * and returns the best point found.
 *
 * # Safety
 * `data` must be a live handle, `out` writable, `converged` null or writable.
 */
enum AbhStatus abh_fit(const struct AbhData *data,
                       uint32_t pilot_days,
                       enum AbhFitMethod method,
                       uint64_t seed,
                       struct AbhParams *out,
                       bool *converged);

/**
 * Log marginal likelihood of the first `pilot_days` days.
 *
 * # Safety
 * `params` readable, `data` a live handle, `out` writable.
 */
enum AbhStatus abh_log_likelihood(const struct AbhParams *params,
                                  const struct AbhData *data,
                                  uint32_t pilot_days,
                                  double *out);

/**
 * Expected number of new users over the `horizon` days after the pilot,
 * with a central credible interval at `level`.
 *
 * # Safety
 * `params` readable, `data` a live handle, `out` writable.
 */
enum AbhStatus abh_predict_new_users(const struct AbhParams *params,
                                     const struct AbhData *data,
                                     uint32_t pilot_days,
                                     uint32_t horizon,
                                     double level,
                                     struct AbhInterval *out);

/**
 * Full forecast (new users, by frequency, old users, total) as a JSON
 * document. Release the string with [`abh_string_free`].
 *
 * # Safety
 * `params` readable, `data` a live handle, `out` writable.
 */
enum AbhStatus abh_forecast_json(const struct AbhParams *params,
                                 const struct AbhData *data,
                                 uint32_t pilot_days,
                                 uint32_t horizon,
                                 double level,
                                 uint64_t n_mc,
                                 uint64_t seed,
                                 char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AB_HORIZON_H */
