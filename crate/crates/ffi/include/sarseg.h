#ifndef SARSEG_H
#define SARSEG_H

/* Generated by cbindgen from sarseg-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API call.
 */
typedef enum SarsegStatus {
  /**
   * Success.
   */
  SARSEG_STATUS_OK = 0,
  /**
   * A pointer was null or an argument value was out of range.
   */
  SARSEG_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Missing or malformed files, or shape mismatches.
   */
  SARSEG_STATUS_DATA_ERROR = 2,
  /**
   * Non-finite values encountered.
   */
  SARSEG_STATUS_NUMERIC_ERROR = 3,
  /**
   * An unexpected internal failure.
   */
  SARSEG_STATUS_INTERNAL_ERROR = 4,
} SarsegStatus;

/**
 * Opaque handle to a loaded segmentation model.
 */
typedef struct SarsegModel SarsegModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sarseg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sarseg_version(void);

/**
 * Loads a checkpoint directory (manifest.json + weights.bin) into a model
 * handle. On success writes the handle to `out_model`; the caller owns it
 * and must release it with [`sarseg_model_free`].
 *
 * # Safety
 * `checkpoint_dir` must be a valid NUL-terminated string and `out_model` a
 * valid pointer.
 */
enum SarsegStatus sarseg_model_load(const char *checkpoint_dir, struct SarsegModel **out_model);

/**
 * Releases a model handle. A null handle is a no-op.
 *
 * # Safety
 * `model` must be a handle produced by [`sarseg_model_load`], released at
 * most once.
 */
void sarseg_model_free(struct SarsegModel *model);

/**
 * Spatial divisor the model requires: input height and width must be
 * multiples of this. Returns 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle from [`sarseg_model_load`].
 */
size_t sarseg_model_input_divisor(const struct SarsegModel *model);

/**
 * Runs one image through the model.
 *
 * `image` is a row-major `height*width` buffer of intensities in [0,1].
 * `prob_out` (nullable) receives the per-pixel spill probabilities;
 * `mask_out` (nullable) receives the thresholded 0/1 mask. Both outputs are
 * `height*width` long.
 *
 * # Safety
 * All non-null pointers must reference buffers of `height*width` elements.
 */
enum SarsegStatus sarseg_predict(const struct SarsegModel *model,
                                 const double *image,
                                 size_t height,
                                 size_t width,
                                 double threshold,
                                 double *prob_out,
                                 uint8_t *mask_out);

/**
 * Generates one synthetic speckled scene with its ground-truth mask, using
 * the default generator parameters at the given tile size and seed. Output
 * buffers are `size*size` long; either may be null.
 *
 * # Safety
 * Non-null output pointers must reference buffers of `size*size` elements.
 */
enum SarsegStatus sarseg_synth_scene(size_t size,
                                     uint64_t seed,
                                     double *image_out,
                                     uint8_t *mask_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SARSEG_H */
