#ifndef FLOWSVDD_H
#define FLOWSVDD_H

/* Generated by cbindgen from flowsvdd-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code for every fallible entry point.
 */
typedef enum FsvddStatus {
  FSVDD_STATUS_OK = 0,
  /**
   * A pointer argument that must not be null was null.
   */
  FSVDD_STATUS_NULL_ARG = 1,
  /**
   * File could not be read or written.
   */
  FSVDD_STATUS_IO = 2,
  /**
   * File exists but does not parse as a model or manifest.
   */
  FSVDD_STATUS_FORMAT = 3,
  /**
   * Input dimensions disagree with the model.
   */
  FSVDD_STATUS_DIMENSION = 4,
  /**
   * Training failed; see `fsvdd_last_error`.
   */
  FSVDD_STATUS_TRAIN = 5,
} FsvddStatus;

/**
 * Opaque trained model: flow, hypersphere, provenance.
 */
typedef struct FsvddModel FsvddModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * Borrowed; do not free.
 */
const char *fsvdd_last_error(void);

/**
 * Load a model from its JSON file into `*out`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to writable storage for one pointer.
 */
enum FsvddStatus fsvdd_model_load(const char *path, struct FsvddModel **out);

/**
 * Train from a run manifest (same semantics as `flowsvdd train`) and hand
 * back the trained model. Artifacts are still written to the manifest's
 * output directory.
 *
 * # Safety
 * `manifest_path` must be a valid NUL-terminated string; `out` must be a
 * valid pointer to writable storage for one pointer.
 */
enum FsvddStatus fsvdd_train(const char *manifest_path, struct FsvddModel **out);

/**
 * Release a model. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer previously returned by
 * `fsvdd_model_load`/`fsvdd_train` that has not been freed.
 */
void fsvdd_model_free(struct FsvddModel *model);

/**
 * Input dimension D of the model, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
uintptr_t fsvdd_model_dim(const struct FsvddModel *model);

/**
 * Decision radius R in normalized latent space, or NaN for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
double fsvdd_model_radius(const struct FsvddModel *model);

/**
 * Score `n` rows of `d` features (row-major `xs`, length n*d). Writes the
 * center distance of each row into `out_scores` (length n) and, when
 * `out_flags` is non-null, 1 for outliers / 0 for inliers (length n).
 *
 * # Safety
 * `model` must be a live handle; `xs` must point to `n * d` doubles;
 * `out_scores` to `n` doubles; `out_flags` must be null or point to
 * `n` bytes.
 */
enum FsvddStatus fsvdd_score(const struct FsvddModel *model,
                             const double *xs,
                             uintptr_t n,
                             uintptr_t d,
                             double *out_scores,
                             uint8_t *out_flags);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWSVDD_H */
