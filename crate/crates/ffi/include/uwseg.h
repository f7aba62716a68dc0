#ifndef UWSEG_H
#define UWSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum UwsegStatus {
  UWSEG_STATUS_OK = 0,
  UWSEG_STATUS_NULL_POINTER = 1,
  UWSEG_STATUS_INVALID_ARGUMENT = 2,
  UWSEG_STATUS_SHAPE_MISMATCH = 3,
  UWSEG_STATUS_NON_BINARY = 4,
  UWSEG_STATUS_IO = 5,
  UWSEG_STATUS_CHECKPOINT = 6,
  UWSEG_STATUS_DATASET = 7,
  UWSEG_STATUS_CONFIG = 8,
  UWSEG_STATUS_FORMAT = 9,
  UWSEG_STATUS_NON_FINITE = 10,
  UWSEG_STATUS_PANIC = 11,
} UwsegStatus;

/**
 * Opaque trained model.
 */
typedef struct UwsegModel UwsegModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. Owned by
 * the library and valid until the next failing call on this thread.
 */
const char *uwseg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uwseg_version(void);

/**
 * Loads a checkpoint written by `uwseg train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UwsegStatus uwseg_model_load(const char *path, struct UwsegModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`uwseg_model_load`] and not be used afterwards.
 */
void uwseg_model_free(struct UwsegModel *model);

/**
 * Hidden channel count of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum UwsegStatus uwseg_model_width(const struct UwsegModel *model, size_t *out);

/**
 * Foreground probabilities for a row-major `height`×`width` image in
 * `[0, 1]` and a box `{r0, c0, r1, c1}` covering rows `r0..r1` and
 * columns `c0..c1` (end exclusive).
 *
 * # Safety
 * `image` and `out_prob` must hold `height * width` values; `box_rc` must
 * hold 4 values.
 */
enum UwsegStatus uwseg_model_predict(const struct UwsegModel *model,
                                     const double *image,
                                     size_t height,
                                     size_t width,
                                     const size_t *box_rc,
                                     double *out_prob);

/**
 * Dice similarity of two 0/1 masks of shape `dims[0..rank]`, rank 2 or 3.
 *
 * # Safety
 * `y` and `y_hat` must hold `product(dims)` bytes; `dims` must hold `rank`
 * values.
 */
enum UwsegStatus uwseg_dsc(const uint8_t *y,
                           const uint8_t *y_hat,
                           const size_t *dims,
                           size_t rank,
                           double *out);

/**
 * Normalized surface dice at `tolerance` voxels.
 *
 * # Safety
 * As for [`uwseg_dsc`].
 */
enum UwsegStatus uwseg_nsd(const uint8_t *y,
                           const uint8_t *y_hat,
                           const size_t *dims,
                           size_t rank,
                           double tolerance,
                           double *out);

/**
 * Signed distance to the mask boundary, negative inside. Writes all zeros
 * for an empty or full mask.
 *
 * # Safety
 * `mask` and `out` must hold `product(dims)` elements.
 */
enum UwsegStatus uwseg_signed_distance_map(const uint8_t *mask,
                                           const size_t *dims,
                                           size_t rank,
                                           double *out);

/**
 * Sum over components of `0.5 * L * exp(-s) + ln(1 + exp(s))`, where
 * `s = ln(sigma^2)`.
 *
 * # Safety
 * `losses` and `log_vars` must hold `m` values.
 */
enum UwsegStatus uwseg_combine(const double *losses, const double *log_vars, size_t m, double *out);

/**
 * The sigma^2 minimizing one combined component for a fixed loss `l >= 0`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UwsegStatus uwseg_stationary_sigma2(double l, double *out);

/**
 * Writes a synthetic dataset to `out_dir`. `config_json` may be null for
 * the defaults.
 *
 * # Safety
 * `out_dir` and, when non-null, `config_json` must be NUL-terminated.
 */
enum UwsegStatus uwseg_generate_dataset(const char *out_dir,
                                        uint64_t seed,
                                        const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UWSEG_H */
