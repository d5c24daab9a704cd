#ifndef LAPREG_H
#define LAPREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LapregMethod {
  LAPREG_METHOD_PNP = 0,
  LAPREG_METHOD_PNP_RANSAC = 1,
  LAPREG_METHOD_SILHOUETTE = 2,
  LAPREG_METHOD_LANDMARK_RENDER = 3,
  LAPREG_METHOD_CHAMFER = 4,
} LapregMethod;

/**
 * Result codes; the non-zero ones match the command-line exit codes where they overlap.
 */
typedef enum LapregStatus {
  LAPREG_STATUS_OK = 0,
  LAPREG_STATUS_INVALID_ARGUMENT = 1,
  LAPREG_STATUS_DATA_ERROR = 2,
  LAPREG_STATUS_ALGORITHM_FAILED = 3,
  LAPREG_STATUS_NULL_POINTER = 4,
  LAPREG_STATUS_PANIC = 5,
} LapregStatus;

/**
 * A loaded case.
 */
typedef struct LapregCase LapregCase;

/**
 * Model-to-camera transform: row-major rotation and translation in millimetres.
 */
typedef struct LapregPose {
  double rotation[9];
  double translation[3];
} LapregPose;

/**
 * Registration settings. Start from [`lapreg_register_options_default`].
 */
typedef struct LapregRegisterOptions {
  /**
   * Restarts; 0 keeps the method's default.
   */
  uint32_t restarts;
  /**
   * Iterations; negative keeps the method's default.
   */
  int32_t iterations;
  /**
   * Render scale; 0 keeps the method's default.
   */
  double render_scale;
  uint64_t seed;
  /**
   * RANSAC inlier threshold in pixels.
   */
  double ransac_threshold;
} LapregRegisterOptions;

/**
 * Registration reprojection error in pixels. A class that could not be scored is NaN.
 */
typedef struct LapregReport {
  double ridge;
  double ligament;
  double combined;
  double hausdorff;
} LapregReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a NUL-terminated string,
 * truncating to `len - 1` bytes. Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t lapreg_last_error(char *buf, size_t len);

/**
 * Loads the case manifest at `path` into `*out`. Release it with [`lapreg_case_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LapregStatus lapreg_case_load(const char *path, struct LapregCase **out);

/**
 * # Safety
 * `case` must be null or a handle from [`lapreg_case_load`] not yet freed.
 */
void lapreg_case_free(struct LapregCase *case_);

/**
 * Ground-truth pose of the case; an invalid argument when its manifest names none.
 *
 * # Safety
 * `case` must be a live handle and `out` a valid pointer.
 */
enum LapregStatus lapreg_case_ground_truth(const struct LapregCase *case_, struct LapregPose *out);

struct LapregRegisterOptions lapreg_register_options_default(void);

/**
 * Registers the case with `method`, writing the best pose and its final loss.
 *
 * # Safety
 * `case` must be a live handle; `options`, `pose` and `loss` valid pointers, `loss`
 * may be null.
 */
enum LapregStatus lapreg_register(const struct LapregCase *case_,
                                  enum LapregMethod method,
                                  const struct LapregRegisterOptions *options,
                                  struct LapregPose *pose,
                                  double *loss);

/**
 * Reprojection error of the case's landmarks under `pose`.
 *
 * # Safety
 * `case` must be a live handle; `pose` and `out` valid pointers.
 */
enum LapregStatus lapreg_reprojection_error(const struct LapregCase *case_,
                                            const struct LapregPose *pose,
                                            struct LapregReport *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lapreg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAPREG_H */
