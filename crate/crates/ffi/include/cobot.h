#ifndef COBOT_H
#define COBOT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pipeline phase, mirroring the run log.
 */
typedef enum CobotPhase {
  COBOT_PHASE_APPROACH = 0,
  COBOT_PHASE_VISUAL_SERVO = 1,
  COBOT_PHASE_GRASPED = 2,
  COBOT_PHASE_TRANSFER = 3,
  COBOT_PHASE_PLACE = 4,
  COBOT_PHASE_DONE = 5,
} CobotPhase;

/**
 * Result codes shared by every function.
 */
typedef enum CobotStatus {
  COBOT_STATUS_OK = 0,
  COBOT_STATUS_NULL_POINTER = 1,
  COBOT_STATUS_INVALID_UTF8 = 2,
  COBOT_STATUS_INVALID_CONFIG = 3,
  COBOT_STATUS_INVALID_ARGUMENT = 4,
  COBOT_STATUS_DMP_FAILED = 5,
  /**
   * Output buffer too small; the required length was written back.
   */
  COBOT_STATUS_BUFFER_TOO_SMALL = 6,
  COBOT_STATUS_PANIC = 99,
} CobotStatus;

/**
 * Opaque learned movement primitive.
 */
typedef struct CobotDmp CobotDmp;

/**
 * Opaque simulator handle.
 */
typedef struct CobotSimulator CobotSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cobot_last_error(void);

/**
 * Version of the WebSocket protocol spoken by `cobot serve`.
 */
uint32_t cobot_protocol_version(void);

/**
 * Builds a simulator from a scenario TOML document. `base_dir` resolves
 * relative paths in the document and may be null for the current directory.
 *
 * # Safety
 * `toml` and `base_dir` must be null or NUL-terminated strings; `out` must be
 * null or point to writable storage for one pointer.
 */
enum CobotStatus cobot_sim_new(const char *toml, const char *base_dir, struct CobotSimulator **out);

/**
 * Releases a simulator. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from [`cobot_sim_new`] not yet freed.
 */
void cobot_sim_free(struct CobotSimulator *sim);

/**
 * Advances up to `n_steps` steps, stopping early when the run finishes.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum CobotStatus cobot_sim_step(struct CobotSimulator *sim, uint64_t n_steps);

/**
 * Runs to completion and writes the outcome as a CLI exit code:
 * 0 done, 1 failed, 2 timeout, 3 singular.
 *
 * # Safety
 * `sim` must be a live handle; `exit_code` must be writable.
 */
enum CobotStatus cobot_sim_run(struct CobotSimulator *sim, int32_t *exit_code);

/**
 * Outcome exit code of a finished run, or -1 while it is still running.
 *
 * # Safety
 * `sim` must be a live handle; `exit_code` must be writable.
 */
enum CobotStatus cobot_sim_outcome(const struct CobotSimulator *sim, int32_t *exit_code);

/**
 * Simulated time, seconds.
 *
 * # Safety
 * `sim` must be a live handle; `t` must be writable.
 */
enum CobotStatus cobot_sim_time(const struct CobotSimulator *sim, double *t);

/**
 * # Safety
 * `sim` must be a live handle; `phase` must be writable.
 */
enum CobotStatus cobot_sim_phase(const struct CobotSimulator *sim, enum CobotPhase *phase);

/**
 * Copies the joint configuration into `q`. `len` is the buffer length; on
 * return it holds the number of joints. Pass `q = NULL` to query the size.
 *
 * # Safety
 * `sim` must be a live handle; `len` must be writable; `q` must be null or
 * hold `*len` doubles.
 */
enum CobotStatus cobot_sim_joints(const struct CobotSimulator *sim, double *q, size_t *len);

/**
 * Starts (`active = true`) or releases a drag of the origin of frame
 * `joint_index` at `velocity` (world frame, m/s). Applied on the next step.
 *
 * # Safety
 * `sim` must be a live handle; `velocity` must hold three doubles.
 */
enum CobotStatus cobot_sim_drag(struct CobotSimulator *sim,
                                size_t joint_index,
                                const double *velocity,
                                bool active);

/**
 * Learns a primitive from `n_samples` rows of `n_dof` joint positions
 * (row-major in `q`) sampled at times `t`, with default parameters.
 *
 * # Safety
 * `t` must hold `n_samples` doubles, `q` `n_samples * n_dof`; `out` must be writable.
 */
enum CobotStatus cobot_dmp_learn(const double *t,
                                 const double *q,
                                 size_t n_samples,
                                 size_t n_dof,
                                 struct CobotDmp **out);

/**
 * Loads a primitive from the JSON written by `cobot learn-dmp`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CobotStatus cobot_dmp_from_json(const char *json, struct CobotDmp **out);

/**
 * Serializes a primitive to JSON. Release the string with [`cobot_string_free`].
 *
 * # Safety
 * `dmp` must be a live handle; `out` must be writable.
 */
enum CobotStatus cobot_dmp_to_json(const struct CobotDmp *dmp, char **out);

/**
 * # Safety
 * `dmp` must be a live handle; `n_dof` must be writable.
 */
enum CobotStatus cobot_dmp_n_dof(const struct CobotDmp *dmp, size_t *n_dof);

/**
 * Integrates the primitive at step `dt` and writes positions row-major into
 * `q` (`n_samples x n_dof`). `goal` (`n_dof` doubles) may be null to keep the
 * demonstrated goal; `tau <= 0` keeps the demonstrated duration.
 *
 * `*n_samples` is the capacity of `q` in rows on entry and the number of rows
 * produced on return. Pass `q = NULL` to query the size.
 *
 * # Safety
 * `dmp` must be a live handle; `goal` null or `n_dof` doubles; `q` null or
 * `*n_samples * n_dof` doubles; `n_samples` writable.
 */
enum CobotStatus cobot_dmp_reproduce(const struct CobotDmp *dmp,
                                     const double *goal,
                                     double tau,
                                     double dt,
                                     double *q,
                                     size_t *n_samples);

/**
 * Releases a primitive. Null is ignored.
 *
 * # Safety
 * `dmp` must be null or a live handle.
 */
void cobot_dmp_free(struct CobotDmp *dmp);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void cobot_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COBOT_H */
