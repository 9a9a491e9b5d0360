#ifndef DRIFT_FFI_H
#define DRIFT_FFI_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by every fallible function.
 */
#define DRIFT_STATUS_OK 0

#define DRIFT_STATUS_ERR 1

#define DRIFT_STATUS_CONFIG 2

#define DRIFT_STATUS_NULL_ARG 5

#define DRIFT_STATUS_PANIC 6

/**
 * Opaque SVD-partitioned matrix (trainable top block, frozen complement).
 */
typedef struct DriftFactored DriftFactored;

/**
 * Opaque rank-decay schedule.
 */
typedef struct DriftSchedule DriftSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or an empty string. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *drift_last_error(void);

/**
 * Create a schedule. `kind`: 0 linear, 1 cosine, 2 sigmoid, 3 exponential.
 * Returns null on invalid arguments (see `drift_last_error`).
 */
struct DriftSchedule *drift_schedule_new(uint32_t kind,
                                         uint32_t r_max,
                                         uint32_t r_min,
                                         uint32_t total_epochs,
                                         double tau);

/**
 * Trainable rank at epoch `i` (clamped to the schedule's floor past the end).
 */
int32_t drift_schedule_rank_at(const struct DriftSchedule *s, uint32_t epoch, uint32_t *rank_out);

void drift_schedule_free(struct DriftSchedule *s);

/**
 * Create a factored matrix from a Gaussian-initialized `rows x cols` weight
 * with `rank` trainable directions. Returns null on invalid arguments.
 */
struct DriftFactored *drift_factored_new(uintptr_t rows,
                                         uintptr_t cols,
                                         uintptr_t rank,
                                         uint64_t seed);

/**
 * Full rank of the underlying matrix (min of its dimensions).
 */
int32_t drift_factored_full_rank(const struct DriftFactored *f, uintptr_t *out);

/**
 * Shrink the trainable block to `rank` without re-running the SVD.
 */
int32_t drift_factored_set_rank(struct DriftFactored *f, uintptr_t rank);

/**
 * Re-run the SVD partition of the merged weight at a new trainable rank.
 */
int32_t drift_factored_repartition(struct DriftFactored *f, uintptr_t rank);

/**
 * Number of scalars in the trainable factors at the current rank.
 */
int32_t drift_factored_trainable_params(const struct DriftFactored *f, uintptr_t *out);

/**
 * Copy the merged `rows x cols` weight (row-major) into `out`, which must
 * hold `len >= rows * cols` doubles.
 */
int32_t drift_factored_merge(const struct DriftFactored *f, double *out, uintptr_t len);

void drift_factored_free(struct DriftFactored *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFT_FFI_H */
