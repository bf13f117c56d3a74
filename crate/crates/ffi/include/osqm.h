#ifndef OSQM_H
#define OSQM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum OsqmStatus {
  OSQM_STATUS_OK = 0,
  OSQM_STATUS_NULL_POINTER = 1,
  /**
   * Bad input or violated precondition.
   */
  OSQM_STATUS_INVALID = 2,
  /**
   * Numerical abort.
   */
  OSQM_STATUS_NUMERICAL = 3,
  OSQM_STATUS_IO = 4,
  OSQM_STATUS_BUFFER_TOO_SMALL = 5,
  OSQM_STATUS_PANIC = 6,
} OsqmStatus;

typedef struct OsqmGrid OsqmGrid;

typedef struct OsqmPartition OsqmPartition;

/**
 * A parsed scenario and, after a run, its final-region frequencies.
 */
typedef struct OsqmScenario OsqmScenario;

typedef struct OsqmWigner OsqmWigner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; valid until the next failing call.
 */
const char *osqm_last_error(void);

/**
 * Library version as a static string.
 */
const char *osqm_version(void);

/**
 * Phase-space grid with `points` per axis; `p_extent` follows from `dx dp N = 2 pi hbar`.
 */
enum OsqmStatus osqm_grid_new(size_t dof,
                              size_t points,
                              double x_extent,
                              double hbar,
                              struct OsqmGrid **out);

/**
 * # Safety
 * `grid` must come from [`osqm_grid_new`] and not be used afterwards.
 */
void osqm_grid_free(struct OsqmGrid *grid);

/**
 * Number of phase-space samples, `N^(2 dof)`; 0 for a null grid.
 *
 * # Safety
 * `grid` must be null or a live grid handle.
 */
size_t osqm_grid_len(const struct OsqmGrid *grid);

/**
 * Wigner function of the coherent state centred at `(x[i], p[i])`, `i < dof`.
 *
 * # Safety
 * `grid` must be live; `x` and `p` must each point to `dof` doubles.
 */
enum OsqmStatus osqm_wigner_coherent(const struct OsqmGrid *grid,
                                     const double *x,
                                     const double *p,
                                     struct OsqmWigner **out);

/**
 * # Safety
 * `w` must be null or a live Wigner handle, not used afterwards.
 */
void osqm_wigner_free(struct OsqmWigner *w);

/**
 * Phase-space integral of `w` (1 for a normalized state); NaN for a null handle.
 *
 * # Safety
 * `w` must be null or a live Wigner handle.
 */
double osqm_wigner_integral(const struct OsqmWigner *w);

/**
 * Copy the row-major Wigner values into `buf` of capacity `len`.
 *
 * # Safety
 * `w` must be live and `buf` must point to `len` writable doubles.
 */
enum OsqmStatus osqm_wigner_values(const struct OsqmWigner *w, double *buf, size_t len);

/**
 * Write the binary grid dump of `w` to `path`.
 *
 * # Safety
 * `w` must be live; `path` must be a NUL-terminated UTF-8 string.
 */
enum OsqmStatus osqm_wigner_write(const struct OsqmWigner *w, const char *path);

/**
 * Two regions split at `x` along the first position axis.
 *
 * # Safety
 * `grid` must be live.
 */
enum OsqmStatus osqm_partition_half_planes(const struct OsqmGrid *grid,
                                           double x,
                                           struct OsqmPartition **out);

/**
 * # Safety
 * `p` must be null or a live partition handle, not used afterwards.
 */
void osqm_partition_free(struct OsqmPartition *p);

/**
 * Number of regions; 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live partition handle.
 */
size_t osqm_partition_len(const struct OsqmPartition *p);

/**
 * Relative trace-norm defect of the quasiprojectors.
 *
 * # Safety
 * `p` must be live and `out` writable.
 */
enum OsqmStatus osqm_partition_defect(const struct OsqmPartition *p, double *out);

/**
 * Region probabilities of `w`, one per region.
 *
 * # Safety
 * `p` and `w` must be live; `buf` must point to `len` writable doubles.
 */
enum OsqmStatus osqm_partition_probabilities(const struct OsqmPartition *p,
                                             const struct OsqmWigner *w,
                                             double *buf,
                                             size_t len);

/**
 * Parse and validate a JSON scenario document.
 *
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string.
 */
enum OsqmStatus osqm_scenario_from_json(const char *json, struct OsqmScenario **out);

/**
 * # Safety
 * `s` must be null or a live scenario handle, not used afterwards.
 */
void osqm_scenario_free(struct OsqmScenario *s);

/**
 * Run the ensemble and write outputs into `out_dir` (the config's directory when null).
 * A negative `seed` keeps the config's base seed.
 *
 * # Safety
 * `s` must be live; `out_dir` must be null or a NUL-terminated UTF-8 string.
 */
enum OsqmStatus osqm_scenario_run(struct OsqmScenario *s, const char *out_dir, int64_t seed);

/**
 * Number of regions reported by the last run; 0 before any run.
 *
 * # Safety
 * `s` must be null or a live scenario handle.
 */
size_t osqm_scenario_region_count(const struct OsqmScenario *s);

/**
 * Final-region frequencies of the last run.
 *
 * # Safety
 * `s` must be live; `buf` must point to `len` writable doubles.
 */
enum OsqmStatus osqm_scenario_frequencies(const struct OsqmScenario *s, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OSQM_H */
