#ifndef MFSGD_H
#define MFSGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_USAGE = 2,
  MF_STATUS_IO = 3,
  MF_STATUS_FORMAT = 4,
  MF_STATUS_DIVERGED = 5,
  MF_STATUS_PANIC = 6,
  MF_STATUS_CONFIG = 7,
} MfStatus;

typedef enum MfScheme {
  MF_SCHEME_SERIAL = 0,
  MF_SCHEME_HOGWILD = 1,
  MF_SCHEME_WAVEFRONT = 2,
  MF_SCHEME_GLOBAL_TABLE = 3,
} MfScheme;

typedef enum MfPrecision {
  MF_PRECISION_FULL32 = 0,
  MF_PRECISION_HALF16 = 1,
} MfPrecision;

/**
 * Ratings plus the scale applied to them.
 */
typedef struct MfDataset MfDataset;

/**
 * Trained factor matrices.
 */
typedef struct MfModel MfModel;

/**
 * Per-epoch training trace.
 */
typedef struct MfReport MfReport;

/**
 * Training settings. Initialize with [`mf_train_config_default`].
 */
typedef struct MfTrainConfig {
  enum MfScheme scheme;
  size_t workers;
  size_t batch_len;
  /**
   * Wavefront column groups.
   */
  size_t columns;
  /**
   * Block grid for the global-table scheme or the device pipeline.
   */
  size_t grid_rows;
  size_t grid_cols;
  /**
   * Simulated devices; 0 trains without the block pipeline.
   */
  size_t devices;
  size_t lookahead;
  size_t k;
  float lambda_p;
  float lambda_q;
  double alpha;
  double beta;
  size_t epochs;
  /**
   * Early-stop threshold; negative disables it.
   */
  double target_rmse;
  enum MfPrecision precision;
  uint64_t seed;
} MfTrainConfig;

typedef struct MfEpochRecord {
  size_t epoch;
  double lr;
  double epoch_seconds;
  /**
   * NaN when no test set was given.
   */
  double test_rmse;
  uint64_t updates;
} MfEpochRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *mf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void mf_string_free(char *s);

/**
 * Load a rating file, text or binary (detected from its header).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MfStatus mf_dataset_load(const char *path, bool one_based, struct MfDataset **out);

/**
 * Build a dataset from parallel arrays of length `len`.
 *
 * # Safety
 * `users`, `items` and `ratings` must each point to `len` elements.
 */
enum MfStatus mf_dataset_from_triplets(size_t m,
                                       size_t n,
                                       const uint32_t *users,
                                       const uint32_t *items,
                                       const float *ratings,
                                       size_t len,
                                       struct MfDataset **out);

/**
 * Synthetic low-rank ratings with Gaussian noise.
 *
 * # Safety
 * `out` must be writable.
 */
enum MfStatus mf_dataset_synthetic(size_t m,
                                   size_t n,
                                   size_t rank,
                                   double density,
                                   double noise_sigma,
                                   uint64_t seed,
                                   struct MfDataset **out);

/**
 * Rescale ratings into [0, 4]. Models trained on the result report RMSE
 * in the original rating units.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
enum MfStatus mf_dataset_normalize(struct MfDataset *ds);

/**
 * Hold out `fraction` of the samples. Both outputs are new handles.
 *
 * # Safety
 * `ds` must be a live dataset handle; `train_out` and `test_out` writable.
 */
enum MfStatus mf_dataset_split(const struct MfDataset *ds,
                               double fraction,
                               uint64_t seed,
                               struct MfDataset **train_out,
                               struct MfDataset **test_out);

/**
 * Dimensions and sample count.
 *
 * # Safety
 * `ds` must be a live dataset handle; out pointers may be null.
 */
enum MfStatus mf_dataset_shape(const struct MfDataset *ds, size_t *m, size_t *n, size_t *len);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void mf_dataset_free(struct MfDataset *ds);

/**
 * Defaults: serial, one worker, k = 32, lambda 0.05, alpha 0.08, beta 0.3,
 * 20 epochs, full32.
 *
 * # Safety
 * `cfg` must be writable.
 */
enum MfStatus mf_train_config_default(struct MfTrainConfig *cfg);

/**
 * Train a fresh model on `train_ds`, evaluating on `test_ds` (may be null)
 * after every epoch. On divergence `report_out` still receives the epochs
 * completed so far and `model_out` is left untouched.
 *
 * # Safety
 * Handles must be live; `cfg` readable; out pointers writable.
 */
enum MfStatus mf_train(const struct MfDataset *train_ds,
                       const struct MfDataset *test_ds,
                       const struct MfTrainConfig *cfg,
                       struct MfModel **model_out,
                       struct MfReport **report_out);

/**
 * Predicted rating for `(u, v)` in the original rating units.
 *
 * # Safety
 * `model` must be live; `out` writable.
 */
enum MfStatus mf_model_predict(const struct MfModel *model, size_t u, size_t v, float *out);

/**
 * RMSE of `model` on `ds`, in the original rating units.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum MfStatus mf_model_rmse(const struct MfModel *model, const struct MfDataset *ds, double *out);

/**
 * Rows of P, rows of Q and rank.
 *
 * # Safety
 * `model` must be live; out pointers may be null.
 */
enum MfStatus mf_model_shape(const struct MfModel *model, size_t *m, size_t *n, size_t *k);

/**
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
enum MfStatus mf_model_save(const struct MfModel *model, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum MfStatus mf_model_load(const char *path, struct MfModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mf_model_free(struct MfModel *model);

/**
 * Number of completed epochs.
 *
 * # Safety
 * `report` must be live; `out` writable.
 */
enum MfStatus mf_report_len(const struct MfReport *report, size_t *out);

/**
 * # Safety
 * `report` must be live; `out` writable.
 */
enum MfStatus mf_report_epoch(const struct MfReport *report,
                              size_t index,
                              struct MfEpochRecord *out);

/**
 * Render the report as CSV (`json == false`) or JSON. Free the result
 * with [`mf_string_free`].
 *
 * # Safety
 * `report` must be live; `out` writable.
 */
enum MfStatus mf_report_render(const struct MfReport *report, bool json, char **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void mf_report_free(struct MfReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFSGD_H */
