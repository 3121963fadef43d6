#ifndef PERFHOM_H
#define PERFHOM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PerfhomStatus {
  PERFHOM_STATUS_OK = 0,
  // File system or serialization failure.
  PERFHOM_STATUS_IO = 1,
  // Invalid configuration or geometry.
  PERFHOM_STATUS_CONFIG = 2,
  // A linear solve, factorization or positivity safeguard failed.
  PERFHOM_STATUS_SOLVER = 3,
  // A consistency check or internal invariant failed.
  PERFHOM_STATUS_INVARIANT = 4,
  PERFHOM_STATUS_NULL_POINTER = 10,
  PERFHOM_STATUS_INVALID_ARGUMENT = 11,
  // Index outside the valid range, or an output buffer too small.
  PERFHOM_STATUS_OUT_OF_RANGE = 12,
  // A Rust panic was caught; the handle involved should be discarded.
  PERFHOM_STATUS_PANIC = 13,
} PerfhomStatus;

// Parsed and validated run configuration.
typedef struct PerfhomConfig PerfhomConfig;

// A finished micro or macro run: time record plus snapshots on the full grid.
typedef struct PerfhomRun PerfhomRun;

// Effective diffusion tensor with porosity and diagnostics.
typedef struct PerfhomTensor PerfhomTensor;

// Scalar diagnostics of a [`PerfhomRun`].
typedef struct PerfhomRunSummary {
  double final_time;
  // Largest relative per-step mass-balance residual.
  double max_balance_residual;
  double min_value;
  // Time-integrated boundary inflow of each species.
  double inflow[3];
  double h;
  uint32_t dim;
  uint32_t halvings;
  size_t steps;
  size_t snapshots;
  // Values per species in one snapshot.
  size_t points;
} PerfhomRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *perfhom_version(void);

// Message of the last failure on this thread, or null if none occurred.
// The pointer stays valid until the next failing call on the same thread.
const char *perfhom_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a `perfhom_*` function returning `char *` and must not
// be freed twice.
void perfhom_string_free(char *s);

// Parses and validates a TOML configuration. Missing keys take defaults.
//
// # Safety
// `toml` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum PerfhomStatus perfhom_config_from_toml(const char *toml, struct PerfhomConfig **out);

// The resolved configuration (all defaults filled in) as TOML.
// Release with [`perfhom_string_free`].
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_config_to_toml(const struct PerfhomConfig *cfg, char **out);

// Number of ε values in the configuration, largest first.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_config_epsilon_count(const struct PerfhomConfig *cfg, size_t *out);

// The `index`-th ε value, largest first.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_config_epsilon(const struct PerfhomConfig *cfg,
                                          size_t index,
                                          double *out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void perfhom_config_free(struct PerfhomConfig *cfg);

// Solves the cell problem on an `m^dim` raster of the unit cell with a
// centred spherical hole of radius `hole_radius`.
//
// # Safety
// `out` must be writable.
enum PerfhomStatus perfhom_cell_homogenize(uint32_t dim,
                                           double hole_radius,
                                           uint32_t m,
                                           struct PerfhomTensor **out);

// # Safety
// `t` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_tensor_dim(const struct PerfhomTensor *t, uint32_t *out);

// Entry `D_ij` (zero-based).
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_tensor_entry(const struct PerfhomTensor *t,
                                        uint32_t i,
                                        uint32_t j,
                                        double *out);

// Fluid volume fraction of the rastered cell.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_tensor_porosity(const struct PerfhomTensor *t, double *out);

// Largest difference between the energy and flux forms of the tensor.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_tensor_formula_gap(const struct PerfhomTensor *t, double *out);

// # Safety
// `t` must be null or a handle not yet freed.
void perfhom_tensor_free(struct PerfhomTensor *t);

// Micro run on the perforated domain at scale `epsilon`, which need not be
// one of the configured values. The cell problem is solved at the
// configured cells-per-period resolution.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_micro_run(const struct PerfhomConfig *cfg,
                                     double epsilon,
                                     struct PerfhomRun **out);

// Homogenized run with the effective coefficients of the configuration.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_macro_run(const struct PerfhomConfig *cfg, struct PerfhomRun **out);

// # Safety
// `run` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_run_summary(const struct PerfhomRun *run, struct PerfhomRunSummary *out);

// Grid extents, first axis first. `extents` must hold `len >= dim` values.
//
// # Safety
// `run` must be a live handle; `extents` must point to `len` writable values.
enum PerfhomStatus perfhom_run_shape(const struct PerfhomRun *run, size_t *extents, size_t len);

// Copies species `species` (0–2) of snapshot `index` into `buf`, first axis
// fastest, zeros in the holes. `time` (optional) receives the snapshot time.
//
// # Safety
// `run` must be a live handle; `buf` must point to `len` writable values;
// `time` must be null or writable.
enum PerfhomStatus perfhom_run_snapshot(const struct PerfhomRun *run,
                                        size_t index,
                                        uint32_t species,
                                        double *buf,
                                        size_t len,
                                        double *time);

// The per-step record as CSV. Release with [`perfhom_string_free`].
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum PerfhomStatus perfhom_run_record_csv(const struct PerfhomRun *run, char **out);

// # Safety
// `run` must be null or a handle not yet freed.
void perfhom_run_free(struct PerfhomRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERFHOM_H */
