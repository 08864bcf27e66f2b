#ifndef FSIEQ_H
#define FSIEQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsieqStatus {
  FSIEQ_STATUS_OK = 0,
  FSIEQ_STATUS_NULL_ARGUMENT = 1,
  FSIEQ_STATUS_INVALID_UTF8 = 2,
  /**
   * Parse failure or invalid values.
   */
  FSIEQ_STATUS_CONFIG = 3,
  /**
   * The Picard or linear iteration did not converge.
   */
  FSIEQ_STATUS_NON_CONVERGENCE = 4,
  /**
   * The run finished but some cases did not converge.
   */
  FSIEQ_STATUS_PARTIAL = 5,
  FSIEQ_STATUS_IO = 6,
  FSIEQ_STATUS_OTHER = 7,
  FSIEQ_STATUS_PANIC = 8,
} FsieqStatus;

/**
 * Parsed run configuration.
 */
typedef struct FsieqConfig FsieqConfig;

/**
 * Result of a single equilibrium solve.
 */
typedef struct FsieqSummary {
  double lambda;
  double theta;
  double delta[3];
  /**
   * Force of the fluid on the body.
   */
  double force[3];
  double boundary_torque;
  /**
   * ‖∇u‖₂ of the perturbation.
   */
  double grad_norm;
  uint32_t iterations;
  double wall_time;
} FsieqSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fsieq_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fsieq_version(void);

/**
 * Parses a JSON configuration. On success `*out` owns a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsieqStatus fsieq_config_parse(const char *json, struct FsieqConfig **out);

/**
 * Reads and parses a JSON configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsieqStatus fsieq_config_load(const char *path, struct FsieqConfig **out);

/**
 * Checks every field; the error message lists all violations.
 *
 * # Safety
 * `cfg` must be null or a handle from this library.
 */
enum FsieqStatus fsieq_config_validate(const struct FsieqConfig *cfg);

/**
 * # Safety
 * `cfg` must be null or a handle from this library not yet freed.
 */
void fsieq_config_free(struct FsieqConfig *cfg);

/**
 * Runs the configured scenario and writes its artifacts. `out_dir` may be
 * null to use the directory named in the configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` null or NUL-terminated.
 */
enum FsieqStatus fsieq_run(const struct FsieqConfig *cfg, const char *out_dir, bool deterministic);

/**
 * Solves one equilibrium at the configured λ and grid without writing files.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a writable pointer.
 */
enum FsieqStatus fsieq_solve_equilibrium(const struct FsieqConfig *cfg, struct FsieqSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSIEQ_H */
