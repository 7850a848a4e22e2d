#ifndef DSAL_H
#define DSAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsalStatus {
  DSAL_STATUS_OK = 0,
  DSAL_STATUS_NULL_POINTER = 1,
  DSAL_STATUS_INVALID_ARGUMENT = 2,
  DSAL_STATUS_DIMENSION_MISMATCH = 3,
  DSAL_STATUS_IO = 4,
  DSAL_STATUS_PARSE = 5,
  DSAL_STATUS_PANIC = 6,
} DsalStatus;

/**
 * Opaque CRF ensemble.
 */
typedef struct DsalEnsemble DsalEnsemble;

/**
 * Opaque deeply supervised segmenter.
 */
typedef struct DsalSegmenter DsalSegmenter;

/**
 * Dense CRF hyperparameters; see `dsal_crf_params_default`.
 */
typedef struct DsalCrfParams {
  double gaussian_sdims;
  double gaussian_compat;
  double bilateral_sdims;
  double bilateral_schan;
  double bilateral_compat;
  uint32_t steps;
} DsalCrfParams;

/**
 * Query scores of one prediction.
 */
typedef struct DsalScores {
  double l_dsc;
  double m_dsc;
  double mean_dsc;
  double uncertainty;
  double confidence;
} DsalScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t dsal_last_error_message(char *buf, size_t len);

/**
 * Center used for 32x32 inputs.
 */
struct DsalCrfParams dsal_crf_params_default(void);

/**
 * Tuned center for ISIC-sized dermoscopy images.
 */
struct DsalCrfParams dsal_crf_params_isic(void);

/**
 * Tuned center for RSNA-sized radiographs.
 */
struct DsalCrfParams dsal_crf_params_rsna(void);

/**
 * Creates a segmenter with seeded initial weights.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum DsalStatus dsal_segmenter_new(uint64_t seed, struct DsalSegmenter **out);

/**
 * Loads a segmenter from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum DsalStatus dsal_segmenter_load(const char *path, struct DsalSegmenter **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum DsalStatus dsal_segmenter_save(const struct DsalSegmenter *model, const char *path);

/**
 * Releases a segmenter. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dsal_segmenter_free(struct DsalSegmenter *model);

/**
 * Predicts the three heads for one image with values in `[0, 1]`.
 * Any output pointer may be null to skip that head.
 *
 * # Safety
 * Buffers must hold `height * width` values.
 */
enum DsalStatus dsal_segmenter_predict(const struct DsalSegmenter *model,
                                       const double *image,
                                       size_t height,
                                       size_t width,
                                       double *lower,
                                       double *middle,
                                       double *final_);

/**
 * Warm-started training on `count` image/mask pairs stored back to back.
 * Masks hold 0 or 1. Uses the library defaults for everything but
 * `epochs`, `learning_rate` and `seed`.
 *
 * # Safety
 * `images` and `masks` must hold `count * height * width` values.
 */
enum DsalStatus dsal_segmenter_train(struct DsalSegmenter *model,
                                     const double *images,
                                     const uint8_t *masks,
                                     size_t count,
                                     size_t height,
                                     size_t width,
                                     uint32_t epochs,
                                     double learning_rate,
                                     uint64_t seed);

/**
 * Scores a three-head prediction.
 *
 * # Safety
 * Head buffers must hold `height * width` values; `out` valid for a write.
 */
enum DsalStatus dsal_score(const double *lower,
                           const double *middle,
                           const double *final_,
                           size_t height,
                           size_t width,
                           struct DsalScores *out);

/**
 * Dice of two 0/1 masks of `len` pixels.
 *
 * # Safety
 * Both buffers must hold `len` values; `out` valid for a write.
 */
enum DsalStatus dsal_dice(const uint8_t *a, const uint8_t *b, size_t len, double *out);

/**
 * Single-CRF labeling of a probability map.
 *
 * # Safety
 * Buffers must hold `height * width` values; `params` valid for a read.
 */
enum DsalStatus dsal_crf_infer(const struct DsalCrfParams *params,
                               const double *image,
                               const double *prob,
                               size_t height,
                               size_t width,
                               uint8_t *out_mask);

/**
 * Builds an ensemble of `members` (odd) CRFs perturbed around `center` by
 * a normal draw with standard deviation `relative_sigma` times each value.
 *
 * # Safety
 * `center` valid for a read; `out` valid for a pointer write.
 */
enum DsalStatus dsal_ensemble_new(const struct DsalCrfParams *center,
                                  size_t members,
                                  double relative_sigma,
                                  uint64_t seed,
                                  struct DsalEnsemble **out);

/**
 * Loads an ensemble from a snapshot file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` valid for a pointer write.
 */
enum DsalStatus dsal_ensemble_load(const char *path, struct DsalEnsemble **out);

/**
 * Number of members.
 *
 * # Safety
 * `ensemble` must be null or come from this library.
 */
size_t dsal_ensemble_size(const struct DsalEnsemble *ensemble);

/**
 * Majority-vote refinement of a probability map.
 *
 * # Safety
 * Buffers must hold `height * width` values.
 */
enum DsalStatus dsal_ensemble_refine(const struct DsalEnsemble *ensemble,
                                     const double *image,
                                     const double *prob,
                                     size_t height,
                                     size_t width,
                                     uint8_t *out_mask);

/**
 * Releases an ensemble. Null is ignored.
 *
 * # Safety
 * `ensemble` must come from this library and not be used afterwards.
 */
void dsal_ensemble_free(struct DsalEnsemble *ensemble);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSAL_H */
