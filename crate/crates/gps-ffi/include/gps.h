#ifndef GPS_FFI_H
#define GPS_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Covariance estimators for the group coefficients.
 */
typedef enum GpsCovariance {
  GpsCovariance_Pesaran = 0,
  GpsCovariance_DriscollKraay = 1,
  GpsCovariance_Theoretical = 2,
} GpsCovariance;

/**
 * Group-structure estimators.
 */
typedef enum GpsMethod {
  GpsMethod_Tsk = 0,
  GpsMethod_Pcr = 1,
  GpsMethod_Gfe = 2,
} GpsMethod;

/**
 * Result codes for every API call.
 */
typedef enum GpsStatus {
  GpsStatus_Ok = 0,
  GpsStatus_NullPointer = 1,
  GpsStatus_InvalidArgument = 2,
  GpsStatus_NumericalError = 3,
  GpsStatus_IoError = 4,
  GpsStatus_ParseError = 5,
  GpsStatus_InternalPanic = 6,
} GpsStatus;

/**
 * Opaque fit handle.
 */
typedef struct GpsFit GpsFit;

/**
 * Opaque balanced panel handle.
 */
typedef struct GpsPanel GpsPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string (do not free).
 */
const char *gps_version(void);

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call; do not free.
 */
const char *gps_last_error_message(void);

/**
 * Load a balanced panel from a long-format CSV file with header
 * `unit,time,y,x1..xK`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum GpsStatus gps_panel_load_csv(const char *path, struct GpsPanel **out);

/**
 * Build a panel from dense arrays: `y` is N*T (unit-major), `x` is N*T*K.
 *
 * # Safety
 * `y` must point to `n*t` doubles, `x` to `n*t*k` doubles, `out` valid.
 */
enum GpsStatus gps_panel_from_arrays(uintptr_t n,
                                     uintptr_t t,
                                     uintptr_t k,
                                     const double *y,
                                     const double *x,
                                     struct GpsPanel **out);

/**
 * One-way within transformation into a new handle.
 *
 * # Safety
 * `panel` must be a live handle from this library, `out` valid.
 */
enum GpsStatus gps_panel_within_transform(const struct GpsPanel *panel, struct GpsPanel **out);

/**
 * Panel dimensions.
 *
 * # Safety
 * `panel` must be a live handle; dimension pointers may be null to skip.
 */
enum GpsStatus gps_panel_dims(const struct GpsPanel *panel,
                              uintptr_t *n,
                              uintptr_t *t,
                              uintptr_t *k);

/**
 * Release a panel handle. Null is a no-op.
 *
 * # Safety
 * `panel` must have come from this library and not be freed twice.
 */
void gps_panel_free(struct GpsPanel *panel);

/**
 * Estimate the group structure: TSK clusters unit-level OLS coefficients,
 * PCR pools per group, GFE augments with time dummies.
 *
 * # Safety
 * `panel` must be a live handle and `out` a valid pointer.
 */
enum GpsStatus gps_fit(const struct GpsPanel *panel,
                       enum GpsMethod method,
                       uint32_t groups,
                       uint32_t restarts,
                       uint64_t seed,
                       struct GpsFit **out);

/**
 * Number of groups in a fit.
 *
 * # Safety
 * `fit` must be a live handle, `out` valid.
 */
enum GpsStatus gps_fit_group_count(const struct GpsFit *fit, uint32_t *out);

/**
 * Objective value at convergence.
 *
 * # Safety
 * `fit` must be a live handle, `out` valid.
 */
enum GpsStatus gps_fit_objective(const struct GpsFit *fit, double *out);

/**
 * Copy one-based group labels into `buf` (length must be at least N).
 *
 * # Safety
 * `fit` must be a live handle; `buf` must point to `len` writable u32.
 */
enum GpsStatus gps_fit_labels(const struct GpsFit *fit, uint32_t *buf, uintptr_t len);

/**
 * Serialize a fit (method, labels, coefficients, iteration trace) to JSON.
 *
 * # Safety
 * `fit` must be a live handle; `out` receives a string to free with
 * [`gps_string_free`].
 */
enum GpsStatus gps_fit_to_json(const struct GpsFit *fit, char **out);

/**
 * Rebuild a fit handle from its JSON serialization.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string, `out` valid.
 */
enum GpsStatus gps_fit_from_json(const char *json, struct GpsFit **out);

/**
 * Release a fit handle. Null is a no-op.
 *
 * # Safety
 * `fit` must have come from this library and not be freed twice.
 */
void gps_fit_free(struct GpsFit *fit);

/**
 * Trace-conditioned selective test of `R alpha = r`.
 *
 * `hypothesis_json` carries `{"r_matrix": [[..]], "r_vec": [..]}`;
 * `bandwidth <= 0` selects the default Driscoll-Kraay bandwidth; `sigma2`
 * is only consulted for the theoretical covariance (pass NaN otherwise).
 * The result (statistic, p-values, truncation intervals) is returned as
 * JSON in `out_json`.
 *
 * # Safety
 * `panel` and `fit` must be live handles from this library;
 * `hypothesis_json` a valid string; `out_json` valid. The returned string
 * must be freed with [`gps_string_free`].
 */
enum GpsStatus gps_selective_test(const struct GpsPanel *panel,
                                  const struct GpsFit *fit,
                                  const char *hypothesis_json,
                                  enum GpsCovariance covariance,
                                  int bandwidth,
                                  double sigma2,
                                  char **out_json);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have been returned by a `gps_*` function and not freed twice.
 */
void gps_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPS_FFI_H */
