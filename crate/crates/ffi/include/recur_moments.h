#ifndef RECUR_MOMENTS_H
#define RECUR_MOMENTS_H

#pragma once

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum RmStatus {
  RM_STATUS_OK = 0,
  RM_STATUS_NULL_POINTER = 1,
  RM_STATUS_INVALID_UTF8 = 2,
  RM_STATUS_INVALID_ARGUMENT = 3,
  RM_STATUS_INVALID_STATE = 4,
  RM_STATUS_INVALID_KERNEL = 5,
  RM_STATUS_PARSE = 6,
  RM_STATUS_IO = 7,
  // A precondition of the computation failed (including exhausted search budgets).
  RM_STATUS_PRECONDITION = 8,
  // The requested quantity does not exist, e.g. a law without tail certificate.
  RM_STATUS_UNAVAILABLE = 9,
  RM_STATUS_BUFFER_TOO_SMALL = 10,
  RM_STATUS_PANIC = 11,
} RmStatus;

typedef enum RmMomentVerdict {
  RM_MOMENT_VERDICT_CONVERGED = 0,
  RM_MOMENT_VERDICT_DIVERGED = 1,
  RM_MOMENT_VERDICT_INCONCLUSIVE = 2,
} RmMomentVerdict;

typedef enum RmFnVerdict {
  RM_FN_VERDICT_SATISFIES_C = 0,
  RM_FN_VERDICT_VIOLATES_CI = 1,
  RM_FN_VERDICT_VIOLATES_CII = 2,
  RM_FN_VERDICT_INCONCLUSIVE = 3,
} RmFnVerdict;

// Opaque transition kernel.
typedef struct RmKernel RmKernel;

// Opaque passage-time law.
typedef struct RmLaw RmLaw;

// Opaque moment function.
typedef struct RmMomentFn RmMomentFn;

// `E f(T)` estimate. Log-scale fields; `lo`/`hi` are set only when
// converged and `threshold` only when diverged (NaN otherwise).
typedef struct RmMoment {
  double log_partial_sum;
  bool has_tail_bound;
  double log_tail_bound;
  enum RmMomentVerdict verdict;
  double lo;
  double hi;
  double threshold;
  uint64_t horizon;
} RmMoment;

// Classifier outcome. `rate` is the growth rate for `ViolatesCii` (NaN
// otherwise); `witnesses` counts the violation pairs for `ViolatesCi`.
typedef struct RmClassification {
  enum RmFnVerdict verdict;
  double rate;
  uintptr_t witnesses;
} RmClassification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *rm_last_error(void);

// Parses a kernel from its JSON form.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum RmStatus rm_kernel_from_json(const char *json, struct RmKernel **out);

// Two-state chain with `p(0,1) = p`, `p(0,0) = 1 - p`, `p(1,0) = 1`.
//
// # Safety
// `out` must be writable.
enum RmStatus rm_kernel_two_state(double p, struct RmKernel **out);

// Number of states, 0 for NULL.
//
// # Safety
// `kernel` must be NULL or a live kernel handle.
uintptr_t rm_kernel_num_states(const struct RmKernel *kernel);

// # Safety
// `kernel` must be NULL or a handle not yet freed.
void rm_kernel_free(struct RmKernel *kernel);

// Stationary distribution into `out[0..len]`; `len` must cover every state.
//
// # Safety
// `kernel` must be a live handle and `out` valid for `len` writes.
enum RmStatus rm_stationary(const struct RmKernel *kernel, double tol, double *out, uintptr_t len);

// Law of the first passage from state index `i` to `j` (return time when
// `i == j`) over `n = 1..=horizon`.
//
// # Safety
// `kernel` must be a live handle; `out` must be writable.
enum RmStatus rm_first_passage_law(const struct RmKernel *kernel,
                                   uintptr_t i,
                                   uintptr_t j,
                                   uintptr_t horizon,
                                   struct RmLaw **out);

// Largest `n` whose mass is resolved, 0 for NULL.
//
// # Safety
// `law` must be NULL or a live law handle.
uint64_t rm_law_horizon(const struct RmLaw *law);

// `ln P(T = n)`; `-inf` for resolved points without mass.
//
// # Safety
// `law` must be a live handle; `out` must be writable.
enum RmStatus rm_law_log_pmf(const struct RmLaw *law, uint64_t n, double *out);

// `ln P(T > horizon)`, NaN for NULL.
//
// # Safety
// `law` must be NULL or a live law handle.
double rm_law_log_tail_mass(const struct RmLaw *law);

// Geometric tail certificate: `P(T > n + period) <= rho^period P(T > n)`
// for `n >= n0`. Returns `Unavailable` when the law has none.
//
// # Safety
// `law` must be a live handle; the out-pointers must be writable.
enum RmStatus rm_law_tail_cert(const struct RmLaw *law,
                               uint64_t *n0,
                               double *rho,
                               uint64_t *period);

// # Safety
// `law` must be NULL or a handle not yet freed.
void rm_law_free(struct RmLaw *law);

// Parses a moment function such as `power:2`, `logpower:1`, `exp:0.1` or
// `burst:default`.
//
// # Safety
// `spec` must be NUL-terminated; `out` must be writable.
enum RmStatus rm_moment_fn_parse(const char *spec, struct RmMomentFn **out);

// `ln f(n)`.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum RmStatus rm_moment_fn_log_eval(const struct RmMomentFn *f, uint64_t n, double *out);

// # Safety
// `f` must be NULL or a handle not yet freed.
void rm_moment_fn_free(struct RmMomentFn *f);

// `E f(T)` with the default policy (certified growth bounds, divergence
// threshold `ln f(1) + ln 1e6`).
//
// # Safety
// `law` and `f` must be live handles; `out` must be writable.
enum RmStatus rm_f_moment(const struct RmLaw *law,
                          const struct RmMomentFn *f,
                          struct RmMoment *out);

// Classifies `f` against submultiplicativity and subexponential growth
// with the default scan budget.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum RmStatus rm_classify(const struct RmMomentFn *f, struct RmClassification *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECUR_MOMENTS_H */
