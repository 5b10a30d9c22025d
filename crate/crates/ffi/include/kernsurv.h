#ifndef KERNSURV_H
#define KERNSURV_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_ARGUMENT = 2,
  KS_STATUS_IO = 3,
  KS_STATUS_PARSE = 4,
  KS_STATUS_DIMENSION_MISMATCH = 5,
  KS_STATUS_MODEL = 6,
  KS_STATUS_PANIC = 7,
} KsStatus;

/**
 * Survival curve handle.
 */
typedef struct KsCurve KsCurve;

/**
 * Survival dataset handle.
 */
typedef struct KsDataset KsDataset;

/**
 * Fitted model handle: learned embedding plus its conditional Kaplan-Meier predictor.
 */
typedef struct KsModel KsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * Loads a headered CSV. `features` is a comma-separated list of columns, or
 * NULL for every column other than time and event.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum KsStatus ks_dataset_load_csv(const char *path,
                                  const char *time_col,
                                  const char *event_col,
                                  const char *features,
                                  struct KsDataset **out);

/**
 * Builds a dataset from row-major features (`n * d` values), times and
 * event flags (nonzero means the event was observed).
 *
 * # Safety
 * Arrays must hold the stated number of elements; `out` must be writable.
 */
enum KsStatus ks_dataset_from_arrays(const double *features,
                                     size_t n,
                                     size_t d,
                                     const double *times,
                                     const uint8_t *events,
                                     struct KsDataset **out);

/**
 * Synthetic dataset with exponential times of log-rate `beta . x` and
 * exponential censoring tuned to `censor`.
 *
 * # Safety
 * `beta` must hold `beta_len` values; `out` must be writable.
 */
enum KsStatus ks_dataset_synthetic_exponential(size_t n,
                                               size_t d,
                                               const double *beta,
                                               size_t beta_len,
                                               double censor,
                                               uint64_t seed,
                                               struct KsDataset **out);

/**
 * Number of subjects; 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t ks_dataset_len(const struct KsDataset *dataset);

/**
 * Number of features; 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t ks_dataset_feature_dim(const struct KsDataset *dataset);

/**
 * Fraction of censored subjects.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum KsStatus ks_dataset_censored_fraction(const struct KsDataset *dataset, double *out);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void ks_dataset_free(struct KsDataset *dataset);

/**
 * Trains an embedding kernel without cross-validation. `arch` is one of
 * basic, diag, res-basic, res-diag, mlp; `hidden_layers`/`hidden_width` are
 * ignored for basic and diag. `grid_points` 0 uses the unique observed times.
 *
 * # Safety
 * `train_data` must be a live handle, `arch` NUL-terminated, `out` writable.
 */
enum KsStatus ks_model_fit(const struct KsDataset *train_data,
                           const char *arch,
                           size_t hidden_layers,
                           size_t hidden_width,
                           size_t epochs,
                           size_t batch_size,
                           double learning_rate,
                           size_t grid_points,
                           uint64_t seed,
                           struct KsModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum KsStatus ks_model_load(const char *path, struct KsModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` NUL-terminated.
 */
enum KsStatus ks_model_save(const struct KsModel *model, const char *path);

/**
 * Number of input features the model expects; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ks_model_input_dim(const struct KsModel *model);

/**
 * Trainable parameters copied into `buf` (up to `cap`); `len_out` receives
 * the full count.
 *
 * # Safety
 * `buf` must hold `cap` values (may be NULL when `cap` is 0).
 */
enum KsStatus ks_model_params(const struct KsModel *model,
                              double *buf,
                              size_t cap,
                              size_t *len_out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void ks_model_free(struct KsModel *model);

/**
 * Conditional Kaplan-Meier curve at feature vector `x`.
 *
 * # Safety
 * `x` must hold `len` values; `out` must be writable.
 */
enum KsStatus ks_model_predict_curve(const struct KsModel *model,
                                     const double *x,
                                     size_t len,
                                     struct KsCurve **out);

/**
 * Survival-time estimate at `x`: the median when `use_mean` is 0, otherwise
 * the mean up to `horizon` (NaN selects the last grid time). A median that
 * never occurs is reported as +infinity.
 *
 * # Safety
 * `x` must hold `len` values; `out` must be writable.
 */
enum KsStatus ks_model_predict_time(const struct KsModel *model,
                                    const double *x,
                                    size_t len,
                                    int32_t use_mean,
                                    double horizon,
                                    double *out);

/**
 * Number of grid points of the curve; 0 for NULL.
 *
 * # Safety
 * `curve` must be NULL or a live handle.
 */
size_t ks_curve_len(const struct KsCurve *curve);

/**
 * Copies grid times and survival values into two buffers of `cap` entries.
 *
 * # Safety
 * Both buffers must hold `cap` values.
 */
enum KsStatus ks_curve_copy(const struct KsCurve *curve,
                            double *times,
                            double *survival,
                            size_t cap);

/**
 * Survival probability at time `t`; NaN for NULL.
 *
 * # Safety
 * `curve` must be NULL or a live handle.
 */
double ks_curve_at(const struct KsCurve *curve, double t);

/**
 * Median survival time (+infinity if the curve never reaches 1/2); NaN for NULL.
 *
 * # Safety
 * `curve` must be NULL or a live handle.
 */
double ks_curve_median(const struct KsCurve *curve);

/**
 * # Safety
 * `curve` must be NULL or a handle not yet freed.
 */
void ks_curve_free(struct KsCurve *curve);

/**
 * Split-conformal quantile of `n` nonnegative scores at level `alpha`;
 * +infinity when the calibration set is too small.
 *
 * # Safety
 * `scores` must hold `n` values; `out` must be writable.
 */
enum KsStatus ks_marginal_quantile(const double *scores, size_t n, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KERNSURV_H */
