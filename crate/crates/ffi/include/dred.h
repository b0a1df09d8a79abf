#ifndef DRED_H
#define DRED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values match the exit codes of the `dred` command line tool
 * where both exist.
 */
typedef enum DredStatus {
  DRED_STATUS_OK = 0,
  DRED_STATUS_FAILURE = 1,
  DRED_STATUS_CONFIG = 2,
  DRED_STATUS_VALIDATION = 3,
  DRED_STATUS_BLOW_UP = 4,
  DRED_STATUS_HYPOTHESIS = 5,
  DRED_STATUS_NULL_ARGUMENT = 10,
  DRED_STATUS_INVALID_UTF8 = 11,
  DRED_STATUS_OUT_OF_RANGE = 12,
  DRED_STATUS_BUFFER_TOO_SMALL = 13,
  DRED_STATUS_NO_STATES = 14,
  DRED_STATUS_PANIC = 99,
} DredStatus;

/**
 * A parsed and validated scenario.
 */
typedef struct DredScenario DredScenario;

/**
 * The result of one simulation run.
 */
typedef struct DredTrajectory DredTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failed call on this thread into `buf`
 * (nul-terminated, truncated to `len - 1` bytes). Returns the full message
 * length in bytes, excluding the terminator, or 0 if there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dred_last_error_message(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *dred_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned through a `char **` out parameter
 * of this library, not yet freed.
 */
void dred_string_free(char *s);

/**
 * Parses and validates a scenario from its JSON text.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum DredStatus dred_scenario_new(const char *json, struct DredScenario **out);

/**
 * Releases a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must be null or a live handle from [`dred_scenario_new`].
 */
void dred_scenario_free(struct DredScenario *scenario);

/**
 * Number of agents in the scenario's network, or 0 for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t dred_scenario_agents(const struct DredScenario *scenario);

/**
 * Differentiation order `m` of the scenario, or 0 for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t dred_scenario_order(const struct DredScenario *scenario);

/**
 * Checks the scenario's gains and writes the report as JSON to `out`.
 * A report whose conditions fail is still returned with [`DredStatus::Ok`];
 * inspect its `passed` field.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DredStatus dred_verify_gains_json(const struct DredScenario *scenario,
                                       size_t samples,
                                       uint64_t seed,
                                       char **out);

/**
 * Simulates the scenario and returns the full trajectory.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DredStatus dred_run(const struct DredScenario *scenario, struct DredTrajectory **out);

/**
 * Releases a trajectory. Null is ignored.
 *
 * # Safety
 * `traj` must be null or a live handle from [`dred_run`].
 */
void dred_trajectory_free(struct DredTrajectory *traj);

/**
 * Number of samples (`steps + 1`), or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t dred_trajectory_len(const struct DredTrajectory *traj);

/**
 * Copies the sample times into `buf`, which must hold
 * [`dred_trajectory_len`] values.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum DredStatus dred_trajectory_times(const struct DredTrajectory *traj, double *buf, size_t len);

/**
 * Copies the worst-agent error of order `mu` at every sample into `buf`,
 * which must hold [`dred_trajectory_len`] values.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum DredStatus dred_trajectory_errors(const struct DredTrajectory *traj,
                                       size_t mu,
                                       double *buf,
                                       size_t len);

/**
 * Copies the leader reference (derivatives `0..=m`) at sample `k` into
 * `buf`, which must hold `m + 1` values.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum DredStatus dred_trajectory_reference(const struct DredTrajectory *traj,
                                          size_t k,
                                          double *buf,
                                          size_t len);

/**
 * Copies all agent states at sample `k` into `buf`, agent-major:
 * `buf[i * (m + 1) + mu]`. `buf` must hold `n_agents * (m + 1)` values.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum DredStatus dred_trajectory_state(const struct DredTrajectory *traj,
                                      size_t k,
                                      double *buf,
                                      size_t len);

/**
 * Writes the run metadata and default metrics (steady-state error and
 * convergence times per order) as JSON to `out`.
 *
 * # Safety
 * `traj` must be a live handle and `out` a valid pointer.
 */
enum DredStatus dred_trajectory_metrics_json(const struct DredTrajectory *traj, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRED_H */
