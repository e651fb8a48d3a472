#ifndef SCBF_H
#define SCBF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScbfStatus {
  SCBF_STATUS_OK = 0,
  SCBF_STATUS_INVALID_ARGUMENT = 1,
  SCBF_STATUS_ASSUMPTION_VIOLATION = 2,
  SCBF_STATUS_NUMERICAL_BLOWUP = 3,
  SCBF_STATUS_UNSUPPORTED = 4,
  SCBF_STATUS_NULL_POINTER = 5,
  SCBF_STATUS_IO = 6,
  SCBF_STATUS_PANIC = 7,
} ScbfStatus;

/**
 * Spectral basis.
 */
typedef struct ScbfBasis ScbfBasis;

/**
 * Divergence-free field on a basis.
 */
typedef struct ScbfField ScbfField;

/**
 * Model parameters.
 */
typedef struct ScbfModel ScbfModel;

/**
 * Recorded solution path.
 */
typedef struct ScbfTrajectory ScbfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *scbf_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *scbf_version(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum ScbfStatus scbf_basis_new(uint32_t n, double dealias, struct ScbfBasis **out);

/**
 * # Safety
 * `basis` must come from [`scbf_basis_new`] and not be used afterwards.
 */
void scbf_basis_free(struct ScbfBasis *basis);

/**
 * Number of real H-coordinates, or 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
size_t scbf_basis_dim(const struct ScbfBasis *basis);

/**
 * Smallest Stokes eigenvalue, or NaN for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
double scbf_basis_lambda_1(const struct ScbfBasis *basis);

/**
 * Field from `len == dim` orthonormal H-coordinates.
 *
 * # Safety
 * `coords` must point to `len` doubles; `out` must be valid for writes.
 */
enum ScbfStatus scbf_field_from_coords(const struct ScbfBasis *basis,
                                       const double *coords,
                                       size_t len,
                                       struct ScbfField **out);

/**
 * Copies the H-coordinates into `buf`, which must hold `dim` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum ScbfStatus scbf_field_coords(const struct ScbfField *field, double *buf, size_t len);

/**
 * `|u|_H` and `|u|_V`; either output may be null.
 *
 * # Safety
 * Non-null outputs must be valid for writes.
 */
enum ScbfStatus scbf_field_norms(const struct ScbfField *field, double *norm_h, double *norm_v);

/**
 * # Safety
 * `field` must be null or a handle not used afterwards.
 */
void scbf_field_free(struct ScbfField *field);

/**
 * Model from a TOML document with the fields of the `[model]` table; an
 * empty string gives the defaults.
 *
 * # Safety
 * `toml_text` must be a nul-terminated UTF-8 string.
 */
enum ScbfStatus scbf_model_from_toml(const char *toml_text, struct ScbfModel **out);

/**
 * # Safety
 * `model` must be a live handle.
 */
enum ScbfStatus scbf_model_set_scales(struct ScbfModel *model, double eps, double delta);

/**
 * Checks the fast dissipation condition on `basis`.
 *
 * # Safety
 * Handles must be live.
 */
enum ScbfStatus scbf_model_check(const struct ScbfModel *model, const struct ScbfBasis *basis);

/**
 * # Safety
 * `model` must be null or a handle not used afterwards.
 */
void scbf_model_free(struct ScbfModel *model);

/**
 * One slow-fast sample path with step `dt` (0 selects the default) and
 * noise stream `path`.
 *
 * # Safety
 * Handles must be live; `out` must be valid for writes.
 */
enum ScbfStatus scbf_simulate(const struct ScbfModel *model,
                              const struct ScbfField *x0,
                              const struct ScbfField *y0,
                              double dt,
                              uint64_t path,
                              struct ScbfTrajectory **out);

/**
 * Averaged equation with the closed-form drift.
 *
 * # Safety
 * Handles must be live; `out` must be valid for writes.
 */
enum ScbfStatus scbf_solve_averaged(const struct ScbfModel *model,
                                    const struct ScbfField *x0,
                                    double dt,
                                    struct ScbfTrajectory **out);

/**
 * Number of snapshots, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t scbf_trajectory_len(const struct ScbfTrajectory *traj);

/**
 * Time and H, V, L^{r+1} norms of snapshot `index`; outputs may be null.
 *
 * # Safety
 * Non-null outputs must be valid for writes.
 */
enum ScbfStatus scbf_trajectory_sample(const struct ScbfTrajectory *traj,
                                       size_t index,
                                       double *time,
                                       double *norm_h,
                                       double *norm_v,
                                       double *norm_lr1);

/**
 * Copy of the slow state at snapshot `index`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ScbfStatus scbf_trajectory_state(const struct ScbfTrajectory *traj,
                                      size_t index,
                                      struct ScbfField **out);

/**
 * # Safety
 * `traj` must be null or a handle not used afterwards.
 */
void scbf_trajectory_free(struct ScbfTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCBF_H */
