#ifndef SAMP_H
#define SAMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SampStatus {
  SAMP_STATUS_OK = 0,
  SAMP_STATUS_NULL_POINTER = 1,
  SAMP_STATUS_INVALID_ARGUMENT = 2,
  SAMP_STATUS_SHAPE_MISMATCH = 3,
  SAMP_STATUS_UNDEFINED = 4,
  SAMP_STATUS_NUMERIC = 5,
  SAMP_STATUS_IO = 6,
  SAMP_STATUS_FORMAT = 7,
  SAMP_STATUS_PANIC = 8,
} SampStatus;

/**
 * Opaque trained model.
 */
typedef struct SampModel SampModel;

/**
 * Shape information for a loaded model.
 */
typedef struct SampModelInfo {
  size_t channels;
  size_t height;
  size_t width;
  size_t saliency_height;
  size_t saliency_width;
  /**
   * 1 when the model has its own convolutional stem and reads images.
   */
  uint8_t uses_stem;
  /**
   * 1 when predictions include attributes.
   */
  uint8_t has_attributes;
} SampModelInfo;

/**
 * One forward pass.
 */
typedef struct SampPrediction {
  double distribution[5];
  double expected_score;
  double pattern_weights[8];
  /**
   * 1-based.
   */
  uint32_t dominant_pattern;
  double attention[2];
  /**
   * Zeros when `has_attributes` is 0.
   */
  double attributes[5];
  uint8_t has_attributes;
} SampPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next call.
 */
const char *samp_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *samp_version(void);

/**
 * Loads a checkpoint written by `samp train`.
 */
enum SampStatus samp_model_load(const char *path, struct SampModel **out);

/**
 * Releases a model; NULL is ignored.
 */
void samp_model_free(struct SampModel *model);

enum SampStatus samp_model_info(const struct SampModel *model, struct SampModelInfo *out);

/**
 * Predicts from a channel-major C×H×W feature map and a row-major saliency grid
 * of `saliency_height × saliency_width` values.
 */
enum SampStatus samp_model_predict_features(const struct SampModel *model,
                                            const double *features,
                                            size_t features_len,
                                            const double *saliency,
                                            size_t saliency_len,
                                            struct SampPrediction *out);

/**
 * Predicts from an interleaved H×W×channels image with values in [0, 1]
 * (1 or 3 channels). Saliency and features are computed internally.
 */
enum SampStatus samp_model_predict_image(const struct SampModel *model,
                                         const double *pixels,
                                         size_t height,
                                         size_t width,
                                         size_t channels,
                                         struct SampPrediction *out);

/**
 * Normalised EMD between two five-bin distributions.
 */
enum SampStatus samp_emd_loss(const double *y, const double *yhat, double r, double *out);

/**
 * Tie-corrected Kendall's W for a row-major `raters × items` table of scores 1-5.
 */
enum SampStatus samp_kendalls_w(const uint8_t *scores, size_t raters, size_t items, double *out);

/**
 * Spectral-residual saliency of an interleaved H×W×channels image; writes H·W values.
 */
enum SampStatus samp_spectral_residual(const double *pixels,
                                       size_t height,
                                       size_t width,
                                       size_t channels,
                                       double *out);

/**
 * Partition index of every cell of an H×W grid for pattern `p` (1-8), row-major.
 */
enum SampStatus samp_pattern_mask(uint32_t p,
                                  size_t height,
                                  size_t width,
                                  uint32_t *out,
                                  uint32_t *num_partitions);

/**
 * Per-bin loss weights for one category's four bin counts.
 */
enum SampStatus samp_alpha_weights(const uint64_t *counts, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMP_H */
