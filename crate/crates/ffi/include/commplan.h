#ifndef COMMPLAN_H
#define COMMPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Scenario codes accepted by [`cp_simulation_run_episode`].
 */
#define CP_SCENARIO_RANDOM 0

#define CP_SCENARIO_SWAP 1

#define CP_SCENARIO_ASYM 2

/**
 * Result of every fallible call.
 */
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_NULL_POINTER = 1,
  CP_STATUS_INVALID_ARGUMENT = 2,
  CP_STATUS_CONFIG = 3,
  CP_STATUS_DYNAMICS = 4,
  CP_STATUS_POLICY = 5,
  CP_STATUS_CHECKPOINT = 6,
  CP_STATUS_IO = 7,
  CP_STATUS_INTERNAL = 8,
} CpStatus;

/**
 * Opaque single-robot planner.
 */
typedef struct CpPlanner CpPlanner;

/**
 * Opaque episode simulator bound to one configuration and policy.
 */
typedef struct CpSimulation CpSimulation;

/**
 * Robot state: position, velocity and goal in meters (per axis x, y, z)
 * and the collision radius.
 */
typedef struct CpRobotState {
  double position[3];
  double velocity[3];
  double goal[3];
  double radius;
} CpRobotState;

/**
 * Outcome of one simulated episode.
 */
typedef struct CpEpisodeSummary {
  uint64_t steps;
  /**
   * Overlapping pairs at the terminating step (0 on timeout).
   */
  uint64_t collisions;
  uint64_t comm_requests;
  /**
   * 1 if the episode ended in a collision.
   */
  int32_t collided;
  double total_reward;
  double min_separation;
  /**
   * Seconds, averaged over robots that reached their goal; NaN if none did.
   */
  double mean_time_to_goal;
} CpEpisodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *cp_version(void);

/**
 * The embedded default configuration (TOML), a static NUL-terminated string.
 */
const char *cp_default_config(void);

/**
 * Message of the most recent failure on this thread ("" if none). Valid
 * until the next failing call on this thread.
 */
const char *cp_last_error_message(void);

/**
 * Create a planner from a TOML configuration (NULL for the default).
 *
 * # Safety
 * `config_toml` is null or NUL-terminated; `out` is a valid pointer.
 */
enum CpStatus cp_planner_new(const char *config_toml, struct CpPlanner **out);

/**
 * Release a planner. Null is ignored.
 *
 * # Safety
 * `planner` is null or came from [`cp_planner_new`] and is not used again.
 */
void cp_planner_free(struct CpPlanner *planner);

/**
 * Planning horizon N (0 for a null handle).
 *
 * # Safety
 * `planner` is null or a live handle.
 */
size_t cp_planner_horizon(const struct CpPlanner *planner);

/**
 * Plan for one robot against `n_others` assumed teammate trajectories.
 *
 * `others` holds `n_others * N * 3` values: for each teammate, its
 * positions at steps 1..=N, x y z interleaved. On success
 * `out_positions` receives the `N * 3` planned positions and
 * `out_first_input` the 3 accelerations to execute now.
 *
 * # Safety
 * Handles and pointers are valid for the stated lengths; `others` may be
 * null when `n_others` is 0.
 */
enum CpStatus cp_planner_plan(const struct CpPlanner *planner,
                              const struct CpRobotState *state,
                              const double *others,
                              size_t n_others,
                              double *out_positions,
                              double *out_first_input);

/**
 * Advance one robot by one time step under the planner's world limits.
 *
 * # Safety
 * Pointers are valid; `input` holds 3 values.
 */
enum CpStatus cp_planner_step(const struct CpPlanner *planner,
                              const struct CpRobotState *state,
                              const double *input,
                              struct CpRobotState *out);

/**
 * Create a simulator from a TOML configuration (NULL for the default),
 * running full communication until a policy is set.
 *
 * # Safety
 * `config_toml` is null or NUL-terminated; `out` is a valid pointer.
 */
enum CpStatus cp_simulation_new(const char *config_toml, struct CpSimulation **out);

/**
 * Release a simulator. Null is ignored.
 *
 * # Safety
 * `sim` is null or came from [`cp_simulation_new`] and is not used again.
 */
void cp_simulation_free(struct CpSimulation *sim);

/**
 * Replace the master seed.
 *
 * # Safety
 * `sim` is null or a live handle.
 */
enum CpStatus cp_simulation_set_seed(struct CpSimulation *sim, uint64_t seed);

/**
 * Select the communication policy: `full`, `none`, `dist:EPS` or
 * `learned:CHECKPOINT`.
 *
 * # Safety
 * `sim` is a live handle; `policy` is NUL-terminated.
 */
enum CpStatus cp_simulation_set_policy(struct CpSimulation *sim, const char *policy);

/**
 * Run evaluation episode `episode` of `scenario` (a `CP_SCENARIO_*`
 * code) without exploration. The same seed, scenario and episode give
 * the same spawns for every policy and match `commplan evaluate`.
 *
 * # Safety
 * `sim` is a live handle; `out` is a valid pointer.
 */
enum CpStatus cp_simulation_run_episode(struct CpSimulation *sim,
                                        uint32_t scenario,
                                        uint64_t episode,
                                        struct CpEpisodeSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMMPLAN_H */
