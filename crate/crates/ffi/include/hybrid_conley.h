#ifndef HYBRID_CONLEY_H
#define HYBRID_CONLEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HC_OK 0

#define HC_ERR_NULL -1

#define HC_ERR_UTF8 -2

#define HC_ERR_BAD_PARAMETER -3

#define HC_ERR_INVALID_SYSTEM -4

#define HC_ERR_NOT_ON_GUARD -5

#define HC_ERR_INDEX -6

#define HC_ERR_NUMERIC -7

#define HC_ERR_RESET_OUT_OF_DOMAIN -8

#define HC_ERR_GRID_TOO_FINE -9

#define HC_ERR_TOO_MANY_COMPONENTS -10

#define HC_ERR_NO_CHAIN -11

#define HC_ERR_TRANSIENT_TOO_SHORT -12

#define HC_ERR_BUDGET -13

#define HC_ERR_DEGREE_OVERFLOW -14

#define HC_ERR_BLOCKED -15

#define HC_ERR_IO -16

#define HC_ERR_PANIC -99

#define HC_CLASS_INFINITE 0

#define HC_CLASS_ZENO 1

#define HC_CLASS_BLOCKED 2

#define HC_CLASS_TRUNCATED 3

#define HC_VERDICT_TRAPPING 0

#define HC_VERDICT_VIOLATION 2

#define HC_VERDICT_INCONCLUSIVE 3

/**
 * A box graph with its recurrent classes.
 */
typedef struct HcAnalysis HcAnalysis;

/**
 * A validated hybrid system.
 */
typedef struct HcSystem HcSystem;

/**
 * A simulated execution.
 */
typedef struct HcTrace HcTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hc_version(void);

/**
 * Copies the last error message (truncated, NUL-terminated) into `buf`; returns its full length.
 */
size_t hc_last_error(char *buf, size_t len);

/**
 * Instantiates a builtin system by name. Pass NaN for parameters that should take their defaults.
 */
int32_t hc_system_builtin(const char *name,
                          double g,
                          double d,
                          double e0,
                          double alpha,
                          struct HcSystem **out);

/**
 * Parses and validates a system definition in the JSON format.
 */
int32_t hc_system_from_json(const char *json, struct HcSystem **out);

void hc_system_free(struct HcSystem *sys);

int32_t hc_system_n_modes(const struct HcSystem *sys, size_t *out);

/**
 * Maximal flow time of `(mode, x)`; `*finite` is 0 when no guard is met within `horizon`.
 */
int32_t hc_max_flow_time(const struct HcSystem *sys,
                         size_t mode,
                         const double *x,
                         size_t n,
                         double horizon,
                         double *mu,
                         int32_t *finite);

/**
 * Simulates from `(mode, x)` with the given time and jump budget.
 */
int32_t hc_simulate(const struct HcSystem *sys,
                    size_t mode,
                    const double *x,
                    size_t n,
                    double max_time,
                    size_t max_jumps,
                    struct HcTrace **out);

void hc_trace_free(struct HcTrace *t);

/**
 * One of `HC_CLASS_*`.
 */
int32_t hc_trace_class(const struct HcTrace *t, int32_t *out);

/**
 * Extrapolated stop time of a Zeno execution; `HC_ERR_BAD_PARAMETER` for other classes.
 */
int32_t hc_trace_stop_time(const struct HcTrace *t, double *out);

int32_t hc_trace_n_jumps(const struct HcTrace *t, size_t *out);

int32_t hc_trace_jump_time(const struct HcTrace *t, size_t k, double *out);

/**
 * Copies the final state into `x` (capacity `n`) and its mode into `mode`.
 */
int32_t hc_trace_final_state(const struct HcTrace *t, size_t *mode, double *x, size_t n);

/**
 * Builds the box graph at resolution `h` and flow step `t_step`, and its recurrent classes.
 */
int32_t hc_analyze(const struct HcSystem *sys,
                   double h,
                   double t_step,
                   uint64_t seed,
                   struct HcAnalysis **out);

void hc_analysis_free(struct HcAnalysis *a);

int32_t hc_analysis_n_boxes(const struct HcAnalysis *a, size_t *out);

int32_t hc_analysis_n_recurrent(const struct HcAnalysis *a, size_t *out);

int32_t hc_analysis_n_recurrent_classes(const struct HcAnalysis *a, size_t *out);

/**
 * Number of nontrivial attractor-repeller pairs, or -1 when there are too many classes to enumerate.
 */
int32_t hc_analysis_n_nontrivial_pairs(const struct HcAnalysis *a,
                                       int64_t *out);

/**
 * The `k`-th recurrent box id.
 */
int32_t hc_analysis_recurrent_box(const struct HcAnalysis *a, size_t k, size_t *out);

/**
 * Mode and bounds of box `b`; `lo` and `hi` need room for the mode's dimension.
 */
int32_t hc_analysis_box(const struct HcAnalysis *a,
                        size_t b,
                        size_t *mode,
                        double *lo,
                        double *hi,
                        size_t n);

/**
 * Box Lyapunov value of box `b`.
 */
int32_t hc_analysis_lyapunov(const struct HcAnalysis *a, size_t b, double *out);

/**
 * Trapping-guard verdict with default options; writes one of `HC_VERDICT_*`.
 */
int32_t hc_verify_guard(const struct HcSystem *sys, uint64_t seed, int32_t *verdict);

/**
 * Suspension flow for time `t` from the base point `(mode, x)`.
 *
 * On return `*on_cylinder` is 1 when the endpoint lies on a cylinder; then `x_out` holds the guard
 * point, `*id` the guard component and `*s` the height. Otherwise `x_out` is the base state, `*id`
 * its mode and `*s` is 0.
 */
int32_t hc_suspension_phi(const struct HcSystem *sys,
                          size_t mode,
                          const double *x,
                          size_t n,
                          double t,
                          int32_t *on_cylinder,
                          size_t *id,
                          double *x_out,
                          double *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRID_CONLEY_H */
