#ifndef CONTOUR_MEAN_H
#define CONTOUR_MEAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CM_OK 0

/**
 * A required pointer argument was null.
 */
#define CM_ERR_NULL 1

/**
 * Malformed contours, options or files.
 */
#define CM_ERR_INPUT 2

/**
 * The computation failed to converge or hit a singular system.
 */
#define CM_ERR_NUMERICAL 3

/**
 * An index or buffer size was out of range.
 */
#define CM_ERR_RANGE 4

/**
 * Internal error.
 */
#define CM_ERR_PANIC 5

/**
 * An ordered collection of contours.
 */
typedef struct CmContourSet CmContourSet;

/**
 * The outcome of `cm_mean`.
 */
typedef struct CmMeanResult CmMeanResult;

/**
 * Tunable parameters; obtain defaults from `cm_options_default`.
 */
typedef struct CmOptions {
  /**
   * Points per contour after resampling.
   */
  size_t points;
  double exponent;
  size_t outer_max_iters;
  double outer_energy_tol;
  double step_size;
  size_t max_iters;
  double residual_tol;
  double step_clamp;
  double smoothing;
  size_t max_newton_iters;
  double newton_residual_tol;
} CmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct CmOptions cm_options_default(void);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cm_last_error_message(void);

struct CmContourSet *cm_contour_set_new(void);

/**
 * # Safety
 * `set` must be null or a pointer from this library not yet freed.
 */
void cm_contour_set_free(struct CmContourSet *set);

/**
 * Reads a `contourset v1` file into a new set stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
int cm_contour_set_read(const char *path, struct CmContourSet **out);

/**
 * Appends a contour of `count` points given as interleaved `x, y` pairs.
 *
 * # Safety
 * `set` must be a live set and `xy` must hold `2 * count` doubles.
 */
int cm_contour_set_push(struct CmContourSet *set, const double *xy, size_t count);

/**
 * Number of contours in `set` (0 for null).
 *
 * # Safety
 * `set` must be null or a live set.
 */
size_t cm_contour_set_len(const struct CmContourSet *set);

/**
 * Dissimilarity between contours `i` and `j` of `set`.
 *
 * # Safety
 * `set` must be a live set, `options` null or valid, `out` writable.
 */
int cm_dissimilarity(const struct CmContourSet *set,
                     size_t i,
                     size_t j,
                     const struct CmOptions *options,
                     double *out);

/**
 * Mean of every contour in `set`; the result is stored in `*out`.
 *
 * # Safety
 * `set` must be a live set, `options` null or valid, `out` writable.
 */
int cm_mean(const struct CmContourSet *set,
            const struct CmOptions *options,
            struct CmMeanResult **out);

/**
 * # Safety
 * `result` must be null or a pointer from `cm_mean` not yet freed.
 */
void cm_mean_result_free(struct CmMeanResult *result);

/**
 * Points in the mean contour (0 for null).
 *
 * # Safety
 * `result` must be null or live.
 */
size_t cm_mean_result_point_count(const struct CmMeanResult *result);

/**
 * Copies the mean contour as interleaved `x, y` pairs into `xy`, which
 * holds `capacity` doubles.
 *
 * # Safety
 * `result` must be live and `xy` must hold `capacity` doubles.
 */
int cm_mean_result_points(const struct CmMeanResult *result, double *xy, size_t capacity);

/**
 * Final system energy, or NaN for null.
 *
 * # Safety
 * `result` must be null or live.
 */
double cm_mean_result_energy(const struct CmMeanResult *result);

/**
 * Number of outer iterations performed (0 for null).
 *
 * # Safety
 * `result` must be null or live.
 */
size_t cm_mean_result_outer_iterations(const struct CmMeanResult *result);

/**
 * 1 if the outer loop converged, 0 otherwise.
 *
 * # Safety
 * `result` must be null or live.
 */
int cm_mean_result_converged(const struct CmMeanResult *result);

/**
 * Writes the total centroid displacement into `xy[0]`, `xy[1]`.
 *
 * # Safety
 * `result` must be live and `xy` must hold two doubles.
 */
int cm_mean_result_centroid_displacement(const struct CmMeanResult *result, double *xy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTOUR_MEAN_H */
