#ifndef RDAUDIT_H
#define RDAUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RdAuditStatus {
  RD_AUDIT_STATUS_PASS = 0,
  RD_AUDIT_STATUS_FAIL = 1,
  RD_AUDIT_STATUS_INAPPLICABLE = 2,
  RD_AUDIT_STATUS_INFO = 3,
} RdAuditStatus;

/*
 Status codes. Values 3 to 5 match the exit codes of the `rdaudit` binary.
 */
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  RD_STATUS_BLOW_UP = 3,
  RD_STATUS_NUMERICAL_FAILURE = 4,
  RD_STATUS_INVALID_CONFIG = 5,
  RD_STATUS_NULL_POINTER = 6,
  RD_STATUS_IO = 7,
  RD_STATUS_OUT_OF_RANGE = 8,
  RD_STATUS_PANIC = 9,
} RdStatus;

/*
 A validated experiment configuration.
 */
typedef struct RdExperiment RdExperiment;

/*
 A finished run: trajectory snapshots plus the audit report.
 */
typedef struct RdRun RdRun;

/*
 One audit line. `name` is borrowed from the run and lives as long as it.
 */
typedef struct RdAuditRow {
  const char *name;
  double lhs;
  double rhs;
  double margin;
  double tol;
  enum RdAuditStatus status;
} RdAuditRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *rd_version(void);

/*
 Message of the last failure on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *rd_last_error(void);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void rd_string_free(char *s);

/*
 Parses and validates a TOML config. Relative paths inside it resolve
 against `base_dir` (NULL for the current directory).

 # Safety
 `text` and `base_dir` (if not NULL) must be NUL-terminated strings and
 `out` a valid pointer.
 */
enum RdStatus rd_experiment_from_toml(const char *text,
                                      const char *base_dir,
                                      struct RdExperiment **out);

/*
 Loads a config file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_experiment_load(const char *path, struct RdExperiment **out);

/*
 # Safety
 `exp` must be NULL or a handle from this library not yet freed.
 */
void rd_experiment_free(struct RdExperiment *exp);

/*
 Number of species, or 0 for NULL.

 # Safety
 `exp` must be NULL or a live handle.
 */
size_t rd_experiment_species(const struct RdExperiment *exp);

/*
 Number of grid cells, or 0 for NULL.

 # Safety
 `exp` must be NULL or a live handle.
 */
size_t rd_experiment_cells(const struct RdExperiment *exp);

/*
 Effective config with every default filled in (free with
 [`rd_string_free`]); NULL for a NULL handle.

 # Safety
 `exp` must be NULL or a live handle.
 */
char *rd_experiment_config(const struct RdExperiment *exp);

/*
 Runs the experiment and its audits. With a non-NULL `out_dir` the CSV,
 report and snapshot files are written there as the binary would.
 Failed audits still return [`RdStatus::Ok`]; see [`rd_run_passed`].

 # Safety
 `exp` must be a live handle, `out_dir` NULL or a NUL-terminated string,
 `out` a valid pointer.
 */
enum RdStatus rd_experiment_run(const struct RdExperiment *exp,
                                const char *out_dir,
                                struct RdRun **out);

/*
 # Safety
 `run` must be NULL or a handle from this library not yet freed.
 */
void rd_run_free(struct RdRun *run);

/*
 True when no audit failed.

 # Safety
 `run` must be NULL or a live handle.
 */
bool rd_run_passed(const struct RdRun *run);

/*
 # Safety
 `run` must be NULL or a live handle.
 */
size_t rd_run_steps(const struct RdRun *run);

/*
 # Safety
 `run` must be NULL or a live handle.
 */
double rd_run_final_time(const struct RdRun *run);

/*
 # Safety
 `run` must be NULL or a live handle.
 */
size_t rd_run_audit_count(const struct RdRun *run);

/*
 # Safety
 `run` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_run_audit(const struct RdRun *run, size_t index, struct RdAuditRow *out);

/*
 Copies the final values of `species` into `buf`, which must hold exactly
 one entry per cell (`len` is checked).

 # Safety
 `run` must be a live handle and `buf` valid for `len` writes.
 */
enum RdStatus rd_run_final_state(const struct RdRun *run, size_t species, double *buf, size_t len);

/*
 Rendered report text (free with [`rd_string_free`]).

 # Safety
 `run` must be NULL or a live handle.
 */
char *rd_run_report(const struct RdRun *run);

/*
 Diagnostics CSV of the stored snapshots (free with [`rd_string_free`]).

 # Safety
 `run` must be NULL or a live handle.
 */
char *rd_run_csv(const struct RdRun *run);

/*
 Discrete `H⁻¹` norm of cell values on a uniform 1D Neumann grid of the
 given length.

 # Safety
 `values` must be valid for `cells` reads and `out` a valid pointer.
 */
enum RdStatus rd_hminus1_norm_1d(const double *values, size_t cells, double length, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDAUDIT_H */
