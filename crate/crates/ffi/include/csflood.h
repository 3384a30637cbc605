#ifndef CSFLOOD_H
#define CSFLOOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum CsfStatus {
  CSF_STATUS_OK = 0,
  CSF_STATUS_NULL_POINTER = 1,
  CSF_STATUS_INVALID_PARAMETER = 2,
  CSF_STATUS_INDEX_OUT_OF_RANGE = 3,
  CSF_STATUS_SHAPE_MISMATCH = 4,
  CSF_STATUS_NUMERIC = 5,
  CSF_STATUS_CAPACITY = 6,
  CSF_STATUS_UNDEFINED_METRIC = 7,
  CSF_STATUS_IO = 8,
  CSF_STATUS_PANIC = 9,
} CsfStatus;

/**
 * Signature matrix handle.
 */
typedef struct CsfMatrix CsfMatrix;

/**
 * Finished session handle.
 */
typedef struct CsfSession CsfSession;

/**
 * Session parameters. Zero `max_iters` keeps the solver default.
 */
typedef struct CsfSessionParams {
  size_t k_sources;
  size_t t_out;
  double snr_db;
  double lambda;
  double tau;
  size_t max_iters;
  double forward_probability;
  uint64_t seed;
} CsfSessionParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into the library on the same
 * thread.
 */
const char *csf_last_error(void);

/**
 * Generates the `M × N(L+1)` ±1 signature matrix.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CsfStatus csf_matrix_generate(size_t n_nodes,
                                   size_t max_hops,
                                   size_t seq_len,
                                   uint64_t seed,
                                   struct CsfMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from [`csf_matrix_generate`] not yet freed.
 */
void csf_matrix_free(struct CsfMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle; `rows` and `cols` writable or null.
 */
enum CsfStatus csf_matrix_shape(const struct CsfMatrix *m, size_t *rows, size_t *cols);

/**
 * Copies the matrix into `out` in column-major order (`rows * cols` values).
 *
 * # Safety
 * `m` must be a live handle and `out` must hold `len` doubles.
 */
enum CsfStatus csf_matrix_copy(const struct CsfMatrix *m, double *out, size_t len);

/**
 * Solves `min λ‖x‖₁ + ½‖y − Ax‖²` with ISTA. A `step` of zero or less
 * selects `1 / σ_max(A)²`. `y` holds `rows` values and `x_out` `cols`.
 *
 * # Safety
 * `m` must be a live handle; `y` and `x_out` must hold the given lengths.
 */
enum CsfStatus csf_ista_solve(const struct CsfMatrix *m,
                              const double *y,
                              size_t y_len,
                              double lambda,
                              size_t max_iters,
                              double tol,
                              double step,
                              double *x_out,
                              size_t x_len);

/**
 * Defaults matching `SessionConfig::new`.
 */
struct CsfSessionParams csf_session_params_default(void);

/**
 * Runs one flooding session over the lattice described by `m`.
 *
 * # Safety
 * `m` must be a live handle, `params` readable and `out` writable.
 */
enum CsfStatus csf_session_run(const struct CsfMatrix *m,
                               const struct CsfSessionParams *params,
                               struct CsfSession **out);

/**
 * # Safety
 * `s` must be null or a handle from [`csf_session_run`] not yet freed.
 */
void csf_session_free(struct CsfSession *s);

/**
 * Number of nodes, the length of the estimate and ground-truth vectors.
 *
 * # Safety
 * `s` must be a live session handle.
 */
size_t csf_session_len(const struct CsfSession *s);

/**
 * Total packets transmitted during the session.
 *
 * # Safety
 * `s` must be a live session handle.
 */
size_t csf_session_packets(const struct CsfSession *s);

/**
 * Copies the sink estimate and, if `x0_out` is non-null, the ground truth.
 *
 * # Safety
 * `s` must be a live handle; non-null buffers must hold `len` doubles.
 */
enum CsfStatus csf_session_vectors(const struct CsfSession *s,
                                   double *x_hat_out,
                                   double *x0_out,
                                   size_t len);

/**
 * `‖x̂ − x₀‖ / ‖x₀‖` of a finished session.
 *
 * # Safety
 * `s` must be a live handle and `out` writable.
 */
enum CsfStatus csf_session_error(const struct CsfSession *s, double *out);

/**
 * # Safety
 * `x_hat` and `x0` must hold `len` doubles, `out` must be writable.
 */
enum CsfStatus csf_reconstruction_error(const double *x_hat,
                                        const double *x0,
                                        size_t len,
                                        double *out);

/**
 * Conventional bytes for one measurement routed over `hops` hops.
 */
double csf_overhead_conventional(size_t n_nodes, size_t hops);

/**
 * `M · P / 8`
 */
double csf_overhead_proposed(size_t seq_len, size_t packets);

/**
 * `N (L + 1) · P / 8`
 */
double csf_overhead_cdma(size_t n_nodes, size_t max_hops, size_t packets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSFLOOD_H */
