#ifndef EHPS_H
#define EHPS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum EhpsStatus {
  EHPS_STATUS_OK = 0,
  EHPS_STATUS_NULL_POINTER = 1,
  EHPS_STATUS_INVALID_ARGUMENT = 2,
  EHPS_STATUS_DEGENERATE_GEOMETRY = 3,
  EHPS_STATUS_PARSE_ERROR = 4,
  EHPS_STATUS_EMPTY_INPUT = 5,
  EHPS_STATUS_MISSING_VALUE = 6,
  EHPS_STATUS_RANK_DEFICIENT = 7,
  EHPS_STATUS_TRAINING_FAILURE = 8,
  EHPS_STATUS_IO_ERROR = 9,
  EHPS_STATUS_PANIC = 10,
} EhpsStatus;

typedef enum EhpsLayout {
  EHPS_LAYOUT_CANONICAL = 0,
  EHPS_LAYOUT_MINIMAL = 1,
} EhpsLayout;

typedef enum EhpsAlignment {
  EHPS_ALIGNMENT_NONE = 0,
  /**
   * Needs the two anchor points.
   */
  EHPS_ALIGNMENT_ROOT_TRANSLATION = 1,
  EHPS_ALIGNMENT_PROCRUSTES = 2,
} EhpsAlignment;

typedef enum EhpsStrategy {
  EHPS_STRATEGY_BALANCED = 0,
  EHPS_STRATEGY_WEIGHTED = 1,
  EHPS_STRATEGY_CONCATENATED = 2,
} EhpsStrategy;

/**
 * Opaque body model.
 */
typedef struct EhpsModel EhpsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ehps_last_error_message(void);

/**
 * Generates a deterministic toy model into `*out`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EhpsStatus ehps_model_generate(uint64_t seed,
                                    size_t num_vertices,
                                    size_t num_joints,
                                    enum EhpsLayout layout,
                                    struct EhpsModel **out);

/**
 * Loads a model JSON file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`ehps_model_generate`].
 */
enum EhpsStatus ehps_model_load(const char *path, struct EhpsModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EhpsStatus ehps_model_save(const struct EhpsModel *model, const char *path);

/**
 * Releases a handle. NULL is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ehps_model_free(struct EhpsModel *model);

/**
 * Vertex count, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ehps_model_num_vertices(const struct EhpsModel *model);

/**
 * Joint count, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ehps_model_num_joints(const struct EhpsModel *model);

/**
 * Poses the model. `theta` holds J×3 axis-angles, `beta` and `psi` 10 values
 * each, `translation` 3. Writes V×3 vertices and J×3 joints (meters).
 *
 * # Safety
 * All pointers must reference arrays of the sizes above.
 */
enum EhpsStatus ehps_forward(const struct EhpsModel *model,
                             const double *theta,
                             const double *beta,
                             const double *psi,
                             const double *translation,
                             double *out_vertices,
                             double *out_joints);

/**
 * Mean per-point error in millimeters after `alignment`. The anchors are
 * single points (3 values) and are only read for root translation.
 *
 * # Safety
 * `pred` and `gt` must hold `n * 3` values; anchors 3 values when read.
 */
enum EhpsStatus ehps_position_error(const double *pred,
                                    const double *gt,
                                    size_t n,
                                    enum EhpsAlignment alignment,
                                    const double *pred_anchor,
                                    const double *gt_anchor,
                                    double *out_mm);

/**
 * Least-squares similarity mapping `source` onto `target`:
 * `target ≈ scale · R · source + t`. `R` is written row-major (9 values).
 *
 * # Safety
 * `source`/`target` hold `n * 3` values; outputs hold 1, 9 and 3 values.
 */
enum EhpsStatus ehps_umeyama(const double *source,
                             const double *target,
                             size_t n,
                             bool with_scale,
                             double *out_scale,
                             double *out_rotation,
                             double *out_translation);

/**
 * Mean primary error of one subject over a named basket (`whole-body`,
 * `hand`, `hand-pa` or a basket JSON path). Benchmarks whose dataset appears
 * in `trained_on` are excluded.
 *
 * # Safety
 * `benchmark_ids` and `values` hold `n` entries; `trained_on` holds
 * `n_trained` NUL-terminated strings.
 */
enum EhpsStatus ehps_mpe(const char *basket,
                         const char *const *benchmark_ids,
                         const double *values_mm,
                         size_t n,
                         const char *const *trained_on,
                         size_t n_trained,
                         double *out_mm);

/**
 * `error_mm / f1` for detection-aware benchmarks.
 *
 * # Safety
 * `out` must be writable.
 */
enum EhpsStatus ehps_detection_normalized(double error_mm, double f1, double *out);

/**
 * Per-dataset target lengths for `n` datasets given best rank first.
 * `ratio` is only used by the weighted strategy; `total` is ignored by
 * concatenation.
 *
 * # Safety
 * `sizes` and `out_lengths` hold `n` values.
 */
enum EhpsStatus ehps_plan_lengths(enum EhpsStrategy strategy,
                                  uint32_t ratio,
                                  const size_t *sizes,
                                  size_t n,
                                  size_t total,
                                  size_t *out_lengths);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EHPS_H */
