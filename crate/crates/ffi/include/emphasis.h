#ifndef EMPHASIS_H
#define EMPHASIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of positions in a decision distribution (0, 100, ..., 500 shares).
 */
#define EM_NUM_POSITIONS 6

/**
 * Number of admissible emphasis patterns.
 */
#define EM_NUM_PATTERNS 7

typedef enum EmStatus {
  EM_STATUS_OK = 0,
  EM_STATUS_NULL_POINTER = 1,
  EM_STATUS_INVALID_ARGUMENT = 2,
  EM_STATUS_OUT_OF_RANGE = 3,
  EM_STATUS_NOT_FOUND = 4,
  EM_STATUS_REJECTED = 5,
  EM_STATUS_IO = 6,
  EM_STATUS_PARSE = 7,
  EM_STATUS_BUFFER_TOO_SMALL = 8,
  EM_STATUS_INTERNAL = 9,
} EmStatus;

typedef enum EmNaive {
  EM_NAIVE_TOP1 = 0,
  EM_NAIVE_TOP2 = 1,
} EmNaive;

typedef enum EmBaseline {
  EM_BASELINE_FLAT = 0,
  EM_BASELINE_ARGMAX = 1,
  EM_BASELINE_ROULETTE = 2,
} EmBaseline;

/**
 * Opaque trained user model.
 */
typedef struct EmUserModel EmUserModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t em_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *em_version(void);

/**
 * Σ P(d) |d − d_ai| over the six positions.
 *
 * # Safety
 * `probs` must point to 6 doubles; `out` must be writable.
 */
enum EmStatus em_expected_gap(const double *probs, double d_ai, double *out_gap);

/**
 * Writes the 7 admissible pattern codes in enumeration order.
 *
 * # Safety
 * `out_codes` must be writable for `capacity` bytes; `out_count` writable.
 */
enum EmStatus em_enumerate_patterns(uint8_t *out_codes, size_t capacity, size_t *out_count);

/**
 * Chooses among the 7 patterns given each pattern's predicted decision
 * distribution (7 × 6 doubles in enumeration order), with the library's tie
 * rule.
 *
 * # Safety
 * `dists` must point to 42 doubles; outputs must be writable (`out_gap` may be null).
 */
enum EmStatus em_select_from_distributions(const double *dists,
                                           double d_ai,
                                           uint8_t *out_code,
                                           double *out_gap);

/**
 * Loads a user model saved as JSON.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` writable.
 */
enum EmStatus em_user_model_load(const char *path, struct EmUserModel **out_model);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`em_user_model_load`] and not be used afterwards.
 */
void em_user_model_free(struct EmUserModel *model);

/**
 * Runs the selector for `day` of an episode log (JSONL), with earlier days
 * as history. `d_ai < 0` uses the logged advisor decision.
 *
 * # Safety
 * `model` must be a live handle, `log_path` NUL-terminated, outputs writable
 * (`out_gap` may be null).
 */
enum EmStatus em_user_model_select(const struct EmUserModel *model,
                                   const char *log_path,
                                   size_t day,
                                   double d_ai,
                                   uint8_t *out_code,
                                   double *out_gap);

/**
 * 500 shares if `closes[t + 1] > closes[t]`, else 0.
 *
 * # Safety
 * `closes` must point to `len` doubles; `out_shares` writable.
 */
enum EmStatus em_oracle_decide(const double *closes, size_t len, size_t t, double *out_shares);

/**
 * Naive policy from today's BULL/NEUTRAL/BEAR probabilities.
 *
 * # Safety
 * `probs` must point to 3 doubles; `out_shares` writable.
 */
enum EmStatus em_naive_decide(const double *probs, enum EmNaive variant, double *out_shares);

/**
 * Baseline emphasis pattern; ROULETTE draws from a generator seeded with `seed`.
 *
 * # Safety
 * `probs` must point to 3 doubles; `out_code` writable.
 */
enum EmStatus em_baseline_select(enum EmBaseline kind,
                                 const double *probs,
                                 uint64_t seed,
                                 uint8_t *out_code);

/**
 * Moves the account to `target` shares at `price`. An unaffordable order
 * returns `Rejected` and leaves the outputs untouched.
 *
 * # Safety
 * `cash` and `position` must be valid for reads and writes.
 */
enum EmStatus em_apply_order(double *cash, uint32_t *position, double price, uint32_t target);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMPHASIS_H */
