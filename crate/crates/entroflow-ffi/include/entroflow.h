/* C interface to the entroflow laboratory. Generated; do not edit. */

#ifndef ENTROFLOW_H
#define ENTROFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Anything but `Ok` leaves a message in
 * [`ef_last_error_message`].
 */
typedef enum EfStatus {
  EF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  EF_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  EF_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration was rejected; the message says where.
   */
  EF_STATUS_BAD_CONFIG = 3,
  /**
   * The coupling matrix was rejected.
   */
  EF_STATUS_BAD_MATRIX = 4,
  /**
   * The query needs [`ef_run_execute`] to have completed first.
   */
  EF_STATUS_NOT_EXECUTED = 5,
  /**
   * An index or length argument does not fit the run.
   */
  EF_STATUS_OUT_OF_RANGE = 6,
  /**
   * The integrator failed dynamically; partial results remain readable
   * and [`ef_run_write_outputs`] writes a failure report.
   */
  EF_STATUS_FLOW_FAILED = 7,
  /**
   * Filesystem trouble while reading a config or writing outputs.
   */
  EF_STATUS_IO = 8,
  /**
   * An internal panic was caught at the boundary.
   */
  EF_STATUS_PANIC = 9,
} EfStatus;

/**
 * A configured (and possibly executed) run. Opaque; create with
 * [`ef_run_create`] or [`ef_run_create_from_file`], release with
 * [`ef_run_free`].
 */
typedef struct EfRun EfRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build a run from a JSON configuration string. Returns null on rejection;
 * the reason is in [`ef_last_error_message`].
 */
struct EfRun *ef_run_create(const char *config_json);

/**
 * Like [`ef_run_create`], reading the configuration from a file.
 */
struct EfRun *ef_run_create_from_file(const char *path);

/**
 * Release a handle. Null is a no-op.
 */
void ef_run_free(struct EfRun *run);

/**
 * Integrate the configured flow (plus steady-state refinement and
 * certification when the run settles). Idempotent: a second call returns
 * the stored verdict without recomputing. `EF_STATUS_FLOW_FAILED` means the
 * dynamics broke down; the partial results stay queryable.
 */
enum EfStatus ef_run_execute(struct EfRun *run);

/**
 * How the run ended: 0 steady, 1 reached the configured end time, 2 hit the
 * step cap, 3 failed dynamically, -1 not executed yet.
 */
int ef_run_termination(const struct EfRun *run);

/**
 * Entropy of the initial state.
 */
enum EfStatus ef_run_entropy_initial(const struct EfRun *run, double *out);

/**
 * Entropy of the last accepted state.
 */
enum EfStatus ef_run_entropy_final(const struct EfRun *run, double *out);

/**
 * Number of accepted steps.
 */
enum EfStatus ef_run_accepted_steps(const struct EfRun *run, uint64_t *out);

/**
 * Number of rejected step candidates.
 */
enum EfStatus ef_run_rejections(const struct EfRun *run, uint64_t *out);

/**
 * Sup norm of the stationarity residual at the last accepted state.
 */
enum EfStatus ef_run_residual_linf(const struct EfRun *run, double *out);

/**
 * 1 if a steady state was certified on the native and doubled grids, 0 if
 * certification ran and failed, -1 if it was never attempted (non-steady
 * termination, failure, or not executed).
 */
int ef_run_certified(const struct EfRun *run);

/**
 * Number of components in the configured system; 0 only on a null handle.
 */
uintptr_t ef_run_component_count(const struct EfRun *run);

/**
 * Number of grid points per component field; 0 only on a null handle.
 * Known from the configuration, before execution.
 */
uintptr_t ef_run_field_len(const struct EfRun *run);

/**
 * Copy one component of the last accepted state into `out`, which must hold
 * exactly [`ef_run_field_len`] doubles. Values are row-major over the grid.
 */
enum EfStatus ef_run_copy_field(const struct EfRun *run,
                                uintptr_t component,
                                double *out,
                                uintptr_t len);

/**
 * Write the artifact set (trajectory, snapshots, report) to a directory,
 * creating it if needed. Works for failed runs too, which write a failure
 * report and the last good state.
 */
enum EfStatus ef_run_write_outputs(const struct EfRun *run, const char *dir);

/**
 * Gate a coupling matrix (row-major `n` by `n`) through the same checks the
 * configs use: symmetry, positive definiteness, largest eigenvalue below
 * 8 pi. On success writes the reciprocal extreme eigenvalue `lambda` and
 * the admissible exponent `beta` through the optional out pointers.
 */
enum EfStatus ef_matrix_validate(const double *entries,
                                 uintptr_t n,
                                 double *out_lambda,
                                 double *out_beta);

/**
 * Library version as a static string.
 */
const char *ef_version(void);

/**
 * Message for the most recent failure on the calling thread; empty when
 * nothing failed yet. Valid until the next failing call on this thread.
 */
const char *ef_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTROFLOW_H */
