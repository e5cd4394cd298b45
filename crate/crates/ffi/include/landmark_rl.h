#ifndef LANDMARK_RL_H
#define LANDMARK_RL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum LrStatus {
  LR_STATUS_OK = 0,
  LR_STATUS_NULL_POINTER = 1,
  LR_STATUS_INVALID_ARGUMENT = 2,
  LR_STATUS_FORMAT = 3,
  LR_STATUS_IO = 4,
  LR_STATUS_RUNTIME = 5,
  LR_STATUS_PANIC = 6,
} LrStatus;

/**
 * Trained Q-network parameters.
 */
typedef struct LrModel LrModel;

/**
 * A labelled volume.
 */
typedef struct LrVolume LrVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Number of landmarks; position arrays hold `3 * lr_num_landmarks()` values.
 */
size_t lr_num_landmarks(void);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap` bytes. Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t lr_last_error(char *buf, size_t cap);

/**
 * Synthesizes a phantom of `nx*ny*nz` voxels at isotropic `spacing_mm`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum LrStatus lr_volume_generate(size_t nx,
                                 size_t ny,
                                 size_t nz,
                                 double spacing_mm,
                                 uint64_t seed,
                                 struct LrVolume **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LrStatus lr_volume_load(const char *path, struct LrVolume **out);

/**
 * # Safety
 * `vol` must be a live handle and `path` a NUL-terminated string.
 */
enum LrStatus lr_volume_save(const struct LrVolume *vol, const char *path);

/**
 * Writes the grid size to `dims[3]` and the voxel spacing to `spacing_mm[3]`; either may be null.
 *
 * # Safety
 * `vol` must be a live handle; non-null outputs must hold 3 values.
 */
enum LrStatus lr_volume_shape(const struct LrVolume *vol, size_t *dims, double *spacing_mm);

/**
 * Ground-truth landmark coordinates in voxels, `x, y, z` per landmark.
 *
 * # Safety
 * `vol` must be a live handle and `out` must hold `3 * lr_num_landmarks()` values.
 */
enum LrStatus lr_volume_landmarks(const struct LrVolume *vol, double *out);

/**
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void lr_volume_free(struct LrVolume *vol);

/**
 * Loads the online network of a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LrStatus lr_model_load(const char *path, struct LrModel **out);

/**
 * Randomly initialised network from a preset name (`paper`, `desk` or `tiny`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LrStatus lr_model_init(const char *preset, uint64_t seed, struct LrModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void lr_model_free(struct LrModel *model);

/**
 * Runs the greedy multi-agent search and writes the final voxel positions,
 * `x, y, z` per landmark.
 *
 * # Safety
 * Handles must be live and `out` must hold `3 * lr_num_landmarks()` values.
 */
enum LrStatus lr_locate(const struct LrModel *model,
                        const struct LrVolume *vol,
                        size_t max_steps,
                        uint64_t seed,
                        int64_t *out);

/**
 * Fraction of landmarks of one volume whose prediction lies within
 * `threshold_mm` of the ground truth, in percent.
 *
 * # Safety
 * `vol` must be a live handle and `pred` must hold `3 * lr_num_landmarks()` values.
 */
enum LrStatus lr_pck(const struct LrVolume *vol,
                     const int64_t *pred,
                     double threshold_mm,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDMARK_RL_H */
