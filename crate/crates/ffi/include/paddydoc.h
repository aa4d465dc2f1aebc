#ifndef PADDYDOC_H
#define PADDYDOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PD_ABI_VERSION 1

#define PD_NUM_CLASSES 3

/**
 * Result codes. Zero is success.
 */
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_NULL_ARGUMENT = 1,
  PD_STATUS_INVALID_UTF8 = 2,
  PD_STATUS_NOT_FOUND = 3,
  PD_STATUS_INTEGRITY = 4,
  PD_STATUS_VERSION = 5,
  PD_STATUS_VALIDATION = 6,
  PD_STATUS_DECODE = 7,
  PD_STATUS_CATALOG = 8,
  PD_STATUS_IO = 9,
  PD_STATUS_PANIC = 10,
  PD_STATUS_OTHER = 11,
} PdStatus;

/**
 * A loaded model artifact. Safe to share across threads for prediction.
 */
typedef struct PdPredictor PdPredictor;

typedef struct PdPrediction {
  /**
   * 0 bacteria, 1 brown, 2 smut.
   */
  uint32_t class_index;
  double probabilities[PD_NUM_CLASSES];
  double top1_confidence;
  double latency_ms;
  /**
   * Top-1 confidence is below the artifact's confidence floor.
   */
  bool uncertain;
} PdPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t pd_abi_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library from the same thread.
 */
const char *pd_last_error_message(void);

/**
 * Class name for an index (static storage), or null when out of range.
 */
const char *pd_class_name(uint32_t index);

/**
 * Loads and verifies the artifact directory at `artifact_dir`.
 *
 * # Safety
 * `artifact_dir` must be a NUL-terminated string; `out` must be writable.
 */
enum PdStatus pd_predictor_load(const char *artifact_dir, struct PdPredictor **out);

/**
 * Releases a predictor. Null is ignored.
 *
 * # Safety
 * `predictor` must come from [`pd_predictor_load`] and not be used afterwards.
 */
void pd_predictor_free(struct PdPredictor *predictor);

/**
 * Classifies an encoded image (JPEG or PNG).
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` must be writable.
 */
enum PdStatus pd_predict(const struct PdPredictor *predictor,
                         const uint8_t *bytes,
                         size_t len,
                         struct PdPrediction *out);

/**
 * Same pipeline as [`pd_predict`], for frames from a video source.
 *
 * # Safety
 * As for [`pd_predict`].
 */
enum PdStatus pd_predict_frame(const struct PdPredictor *predictor,
                               const uint8_t *bytes,
                               size_t len,
                               struct PdPrediction *out);

/**
 * The artifact's `metadata.json` contents, re-serialized.
 *
 * # Safety
 * `out_json` must be writable; free the result with [`pd_string_free`].
 */
enum PdStatus pd_predictor_metadata_json(const struct PdPredictor *predictor, char **out_json);

/**
 * Bundled advice for `class_name` as JSON.
 *
 * # Safety
 * `class_name` must be NUL-terminated; free the result with [`pd_string_free`].
 */
enum PdStatus pd_recommendation_json(const char *class_name, char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void pd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PADDYDOC_H */
