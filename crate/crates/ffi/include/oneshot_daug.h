#ifndef ONESHOT_DAUG_H
#define ONESHOT_DAUG_H

/* Generated by cbindgen from the oneshot-daug-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OdStatus {
  OD_STATUS_OK = 0,
  OD_STATUS_NULL_POINTER = 1,
  OD_STATUS_INVALID_ARGUMENT = 2,
  OD_STATUS_DIMENSION_MISMATCH = 3,
  OD_STATUS_PRECONDITION = 4,
  OD_STATUS_IO = 5,
  OD_STATUS_BUFFER_TOO_SMALL = 6,
  OD_STATUS_PANIC = 7,
} OdStatus;

/**
 * Source of the extra views in a benchmark.
 */
typedef enum OdMode {
  OD_MODE_NONE = 0,
  OD_MODE_ONE_SHOT_DAUG = 1,
  OD_MODE_TRADITIONAL = 2,
  OD_MODE_ORACLE = 3,
} OdMode;

/**
 * Opaque noise schedule.
 */
typedef struct OdSchedule OdSchedule;

/**
 * Opaque synthetic image world.
 */
typedef struct OdWorld OdWorld;

/**
 * Augmentation settings; `deterministic` and `shape_tweak` are 0 or 1.
 */
typedef struct OdAugParams {
  double eta;
  double lambda_img;
  int32_t deterministic;
  int32_t shape_tweak;
} OdAugParams;

/**
 * Benchmark settings; `mode` takes an [`OdMode`] value.
 */
typedef struct OdBenchmarkParams {
  uint32_t mode;
  size_t way;
  size_t shot;
  size_t queries;
  size_t episodes;
  size_t k_sup;
  size_t k_qry;
  double original_weight;
  struct OdAugParams aug;
} OdBenchmarkParams;

/**
 * Benchmark summary; `diversity` is meaningful only when `has_diversity` is 1.
 */
typedef struct OdBenchmarkResult {
  double mean;
  double std_error;
  double ci95;
  double diversity;
  int32_t has_diversity;
  size_t episodes;
} OdBenchmarkResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *od_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t od_last_error_message(char *buf, size_t len);

/**
 * Creates the default 16-class glyph world with per-pixel spread `std`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OdStatus od_world_new_default(double std, struct OdWorld **out);

/**
 * Creates a world from `count` row-major templates of `width x height` pixels.
 *
 * # Safety
 * `templates` must point to `count * width * height` readable doubles and
 * `out` to writable storage for one handle.
 */
enum OdStatus od_world_new(const double *templates,
                           size_t count,
                           size_t width,
                           size_t height,
                           double std,
                           struct OdWorld **out);

/**
 * Frees a world; null is ignored.
 *
 * # Safety
 * `world` must be null or a handle from this library not yet freed.
 */
void od_world_free(struct OdWorld *world);

/**
 * Reports the template width, height and class count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OdStatus od_world_shape(const struct OdWorld *world,
                             size_t *width,
                             size_t *height,
                             size_t *classes);

/**
 * Copies template `k` into `out`, which holds `len` doubles.
 *
 * # Safety
 * `world` must be a valid handle and `out` must point to `len` writable doubles.
 */
enum OdStatus od_world_template(const struct OdWorld *world, size_t k, double *out, size_t len);

/**
 * Creates a linear noise schedule.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OdStatus od_schedule_new(size_t steps,
                              double beta_start,
                              double beta_end,
                              struct OdSchedule **out);

/**
 * Frees a schedule; null is ignored.
 *
 * # Safety
 * `schedule` must be null or a handle from this library not yet freed.
 */
void od_schedule_free(struct OdSchedule *schedule);

/**
 * Maps a noise level in `[0, 1]` to its start step.
 *
 * # Safety
 * `schedule` must be a valid handle and `out` writable.
 */
enum OdStatus od_eta_to_start_time(const struct OdSchedule *schedule, double eta, size_t *out);

/**
 * Default augmentation settings.
 */
struct OdAugParams od_aug_params_default(void);

/**
 * Default benchmark settings (5-way 1-shot, 3 queries, 2000 episodes, two views each side).
 */
struct OdBenchmarkParams od_benchmark_params_default(void);

/**
 * Generates one variant of `image` (row-major, world-sized) into `out`.
 *
 * # Safety
 * Handles must be valid, `image` must point to `len` doubles and `out` to
 * `len` writable doubles, `params` must be valid.
 */
enum OdStatus od_augment_once(const struct OdWorld *world,
                              const struct OdSchedule *schedule,
                              const double *image,
                              size_t len,
                              const struct OdAugParams *params,
                              uint64_t seed,
                              double *out);

/**
 * Runs the few-shot benchmark.
 *
 * # Safety
 * Handles and pointers must be valid.
 */
enum OdStatus od_run_benchmark(const struct OdWorld *world,
                               const struct OdSchedule *schedule,
                               const struct OdBenchmarkParams *params,
                               uint64_t seed,
                               struct OdBenchmarkResult *out);

/**
 * Checks the risk decomposition on every table with up to `max_outcomes`
 * outcomes and probabilities in multiples of `1 / denominator`.
 *
 * # Safety
 * `tables` and `max_gap` must be writable.
 */
enum OdStatus od_prop1_exhaustive(size_t max_outcomes,
                                  uint32_t denominator,
                                  size_t *tables,
                                  double *max_gap);

/**
 * Estimates the probability that averaging one extra view shrinks the
 * largest feature norm, for standard normal features.
 *
 * # Safety
 * `estimate` and `std_error` must be writable.
 */
enum OdStatus od_prop3(size_t dim,
                       size_t m,
                       size_t trials,
                       uint64_t seed,
                       double *estimate,
                       double *std_error);

/**
 * Side length of the default glyph templates.
 */
size_t od_glyph_size(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONESHOT_DAUG_H */
