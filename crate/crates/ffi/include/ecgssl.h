#ifndef ECGSSL_H
#define ECGSSL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcgsslStatus {
  ECGSSL_STATUS_OK = 0,
  ECGSSL_STATUS_NULL_POINTER = 1,
  ECGSSL_STATUS_INVALID_ARGUMENT = 2,
  ECGSSL_STATUS_VALIDATION = 3,
  ECGSSL_STATUS_UNSUPPORTED = 4,
  ECGSSL_STATUS_SHAPE = 5,
  ECGSSL_STATUS_FORMAT = 6,
  ECGSSL_STATUS_IO = 7,
  ECGSSL_STATUS_TRANSFER = 8,
  ECGSSL_STATUS_BUFFER_TOO_SMALL = 9,
  ECGSSL_STATUS_INTERNAL = 10,
} EcgsslStatus;

typedef enum EcgsslModelKind {
  ECGSSL_MODEL_KIND_PRETEXT = 0,
  ECGSSL_MODEL_KIND_EMOTION = 1,
} EcgsslModelKind;

/**
 * Opaque model handle.
 */
typedef struct EcgsslModel EcgsslModel;

/**
 * Transformation parameters; see `ecgssl_transform_params_default`.
 */
typedef struct EcgsslTransformParams {
  double noise_sigma_rel;
  double scale_factor;
  size_t permute_pieces;
  size_t warp_pieces;
  double warp_stretch;
} EcgsslTransformParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after success).
 * Valid until the next call on this thread.
 */
const char *ecgssl_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ecgssl_version(void);

/**
 * Samples per analysis window (10 s at 256 Hz).
 */
size_t ecgssl_window_len(void);

/**
 * Synthetic ECG of `duration_s` seconds at `fs` Hz.
 *
 * # Safety
 * See the crate-level buffer conventions.
 */
enum EcgsslStatus ecgssl_synth_ecg(double heart_rate_bpm,
                                   double fs,
                                   double duration_s,
                                   uint64_t seed,
                                   double *out,
                                   size_t cap,
                                   size_t *out_len);

/**
 * Zero-phase baseline-wander high-pass filter. `out` receives `n` samples.
 *
 * # Safety
 * `signal` must hold `n` readable values and `out` `n` writable values.
 */
enum EcgsslStatus ecgssl_highpass(const double *signal, size_t n, double fs, double *out);

/**
 * Integer-ratio decimation from `fs_in` to `fs_out`.
 *
 * # Safety
 * See the crate-level buffer conventions.
 */
enum EcgsslStatus ecgssl_resample(const double *signal,
                                  size_t n,
                                  double fs_in,
                                  double fs_out,
                                  double *out,
                                  size_t cap,
                                  size_t *out_len);

struct EcgsslTransformParams ecgssl_transform_params_default(void);

/**
 * Apply transformation `task_id` (0 = original, 1 = noise, 2 = scale,
 * 3 = negate, 4 = horizontal flip, 5 = permute, 6 = time warp) to `n`
 * samples. `params` may be null for defaults. `out` receives `n` samples.
 *
 * # Safety
 * `samples` must hold `n` readable values and `out` `n` writable values.
 */
enum EcgsslStatus ecgssl_transform(uint8_t task_id,
                                   const float *samples,
                                   size_t n,
                                   const struct EcgsslTransformParams *params,
                                   uint64_t seed,
                                   float *out);

/**
 * Load a model file. On success `*out` owns a handle.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum EcgsslStatus ecgssl_model_load(const char *path, struct EcgsslModel **out);

/**
 * Write a model to `path`.
 *
 * # Safety
 * `model` must be a live handle; `path` a nul-terminated string.
 */
enum EcgsslStatus ecgssl_model_save(const struct EcgsslModel *model, const char *path);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ecgssl_model_free(struct EcgsslModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum EcgsslStatus ecgssl_model_kind(const struct EcgsslModel *model, enum EcgsslModelKind *out);

/**
 * Input window length and output width of a model.
 *
 * # Safety
 * `model` must be a live handle; the out pointers writable.
 */
enum EcgsslStatus ecgssl_model_dims(const struct EcgsslModel *model,
                                    size_t *input_len,
                                    size_t *output_dim);

/**
 * Inference on `batch` windows of `input_len` samples each (row-major).
 * Pretext models write `batch × 7` task probabilities; emotion models write
 * `batch × classes` class scores.
 *
 * # Safety
 * `x` must hold `batch × input_len` values; see the buffer conventions for
 * `out`.
 */
enum EcgsslStatus ecgssl_model_forward(const struct EcgsslModel *model,
                                       const float *x,
                                       size_t batch,
                                       float *out,
                                       size_t cap,
                                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECGSSL_H */
