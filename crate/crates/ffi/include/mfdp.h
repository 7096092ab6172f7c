#ifndef MFDP_H
#define MFDP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an API call.
typedef enum MfdpStatus {
  MFDP_STATUS_OK = 0,
  // A required pointer argument was null.
  MFDP_STATUS_NULL_POINTER = 1,
  // An argument was malformed: a non-UTF-8 string, zero or odd extents.
  MFDP_STATUS_INVALID_ARGUMENT = 2,
  // A file could not be read or written.
  MFDP_STATUS_IO = 3,
  // A file was read but its contents are malformed or fail the checksum.
  MFDP_STATUS_FORMAT = 4,
  // A shape, mode or configuration precondition failed.
  MFDP_STATUS_CONTRACT = 5,
  // A computation produced a non-finite value.
  MFDP_STATUS_NON_FINITE = 6,
  // The library panicked; this is a bug.
  MFDP_STATUS_PANIC = 7,
} MfdpStatus;

// A model instance. Opaque to C.
typedef struct MfdpModel MfdpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mfdp_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`) and returns the full message length
// excluding the terminator; 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t mfdp_last_error_message(char *buf, size_t len);

// Builds a freshly initialised model from a named preset (`default`,
// `mfdp1`, `mfdp2`, `mfdp3`, `tiny`). `joint_denoise` selects the variant
// that takes a noise level.
//
// # Safety
// `preset` must be a NUL-terminated string and `out` valid for writes.
enum MfdpStatus mfdp_model_new(const char *preset,
                               bool joint_denoise,
                               uint64_t seed,
                               struct MfdpModel **out);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum MfdpStatus mfdp_model_load(const char *path, struct MfdpModel **out);

// Saves a model checkpoint.
//
// # Safety
// `model` must come from this library; `path` must be a NUL-terminated string.
enum MfdpStatus mfdp_model_save(const struct MfdpModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void mfdp_model_free(struct MfdpModel *model);

// Number of learnable scalars.
//
// # Safety
// `model` must come from this library and `out` be valid for writes.
enum MfdpStatus mfdp_model_param_count(const struct MfdpModel *model, size_t *out);

// Whether the model expects a noise level.
//
// # Safety
// `model` must come from this library and `out` be valid for writes.
enum MfdpStatus mfdp_model_is_joint_denoise(const struct MfdpModel *model, bool *out);

// Zeroes the prediction head so the model reproduces nearest-neighbour
// demosaicking exactly.
//
// # Safety
// `model` must come from this library.
enum MfdpStatus mfdp_model_zero_residual(struct MfdpModel *model);

// Demosaics a `height×width` RGGB mosaic into `rgb_out`. `sigma` is the
// noise level in [0,1] units for joint-denoise models and must be negative
// for plain demosaicking models. `high_precision` selects 64-bit arithmetic.
//
// # Safety
// `bayer` must hold `height·width` floats, `rgb_out` room for `3·height·width`.
enum MfdpStatus mfdp_model_demosaic(const struct MfdpModel *model,
                                    const float *bayer,
                                    size_t height,
                                    size_t width,
                                    float sigma,
                                    bool high_precision,
                                    float *rgb_out);

// Nearest-neighbour demosaicking.
//
// # Safety
// `bayer` must hold `height·width` floats, `rgb_out` room for `3·height·width`.
enum MfdpStatus mfdp_demosaic_nn(const float *bayer, size_t height, size_t width, float *rgb_out);

// Samples a planar RGB image through the RGGB filter.
//
// # Safety
// `rgb` must hold `3·height·width` floats, `bayer_out` room for `height·width`.
enum MfdpStatus mfdp_mosaic(const float *rgb, size_t height, size_t width, float *bayer_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFDP_H */
