#ifndef INVARIANT_INR_H
#define INVARIANT_INR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum IrlStatus {
  IRL_STATUS_OK = 0,
  IRL_STATUS_NULL_POINTER = 1,
  IRL_STATUS_INVALID_PATH = 2,
  IRL_STATUS_IO = 3,
  IRL_STATUS_CORRUPT_CHECKPOINT = 4,
  IRL_STATUS_SHAPE_MISMATCH = 5,
  IRL_STATUS_INTERNAL = 6,
} IrlStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct IrlModel IrlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *irl_last_error(void);

/**
 * Loads a checkpoint file and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IrlStatus irl_model_load(const char *path, struct IrlModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`irl_model_load`] and not be freed twice.
 */
void irl_model_free(struct IrlModel *model);

/**
 * Writes the latent size, channel count and image side.
 *
 * # Safety
 * `model` must be a live handle; output pointers may be null.
 */
enum IrlStatus irl_model_dims(const struct IrlModel *model,
                              size_t *latent_dim,
                              size_t *channels,
                              size_t *side);

/**
 * Encodes one image. `z_out` receives `latent_dim` values and `pose_out`
 * three values `(θ̂, τ̂x, τ̂y)`.
 *
 * # Safety
 * `pixels` must hold `pixels_len` values, `z_out` `z_len` values and
 * `pose_out` three values.
 */
enum IrlStatus irl_model_encode(const struct IrlModel *model,
                                const double *pixels,
                                size_t pixels_len,
                                double *z_out,
                                size_t z_len,
                                double *pose_out);

/**
 * Renders code `z` under pose `(theta, tau_x, tau_y)`; the identity pose
 * gives the canonical image. `out` receives `channels × side²` values.
 *
 * # Safety
 * `z` must hold `z_len` values and `out` `out_len` values.
 */
enum IrlStatus irl_model_render(const struct IrlModel *model,
                                const double *z,
                                size_t z_len,
                                double theta,
                                double tau_x,
                                double tau_y,
                                double *out,
                                size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVARIANT_INR_H */
