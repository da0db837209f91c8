#ifndef OVERLAP_SDE_H
#define OVERLAP_SDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum OsdStatus {
  OSD_STATUS_OK = 0,
  OSD_STATUS_INVALID_ARGUMENT = 1,
  OSD_STATUS_CONFIG = 2,
  OSD_STATUS_NUMERICAL = 3,
  OSD_STATUS_NULL_POINTER = 4,
  OSD_STATUS_PANIC = 5,
  OSD_STATUS_IO = 6,
} OsdStatus;

/**
 * Opaque averaged model coefficients.
 */
typedef struct OsdCoeffs OsdCoeffs;

/**
 * Opaque run configuration.
 */
typedef struct OsdConfig OsdConfig;

/**
 * Opaque lowest eigenpairs of a coupled operator.
 */
typedef struct OsdEigen OsdEigen;

/**
 * Opaque element grid.
 */
typedef struct OsdGrid OsdGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *osd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *osd_version(void);

/**
 * # Safety
 * `out` must be valid for one write.
 */
enum OsdStatus osd_grid_new(double length, size_t elements, size_t subgrid, struct OsdGrid **out);

/**
 * # Safety
 * `grid` must come from `osd_grid_new` and not be used afterwards; null is ignored.
 */
void osd_grid_free(struct OsdGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle; `out` valid for one write.
 */
enum OsdStatus osd_grid_spacing(const struct OsdGrid *grid, double *out);

/**
 * Lowest `count` eigenpairs of the coupled operator at coupling `gamma`.
 *
 * # Safety
 * `grid` must be a live handle; `out` valid for one write.
 */
enum OsdStatus osd_eigen_solve(const struct OsdGrid *grid,
                               double gamma,
                               size_t count,
                               struct OsdEigen **out);

/**
 * # Safety
 * `eig` must be a live handle; `buf`, `cap`, `len` as in the module docs.
 */
enum OsdStatus osd_eigen_values(const struct OsdEigen *eig, double *buf, size_t cap, size_t *len);

/**
 * Mean of the slow cluster, the ground rate `λ₀(γ)`.
 *
 * # Safety
 * `eig` must be a live handle; `out` valid for one write.
 */
enum OsdStatus osd_eigen_slow_rate(const struct OsdEigen *eig, double *out);

/**
 * # Safety
 * `eig` must come from `osd_eigen_solve`; null is ignored.
 */
void osd_eigen_free(struct OsdEigen *eig);

/**
 * # Safety
 * `out` must be valid for one write.
 */
enum OsdStatus osd_config_default(struct OsdConfig **out);

/**
 * Parses and validates TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated UTF-8 string; `out` valid for one write.
 */
enum OsdStatus osd_config_from_toml(const char *toml, struct OsdConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum OsdStatus osd_config_set_seed(struct OsdConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must come from this library; null is ignored.
 */
void osd_config_free(struct OsdConfig *cfg);

/**
 * Averaged coefficients at the configured grid, from the projected noise.
 *
 * # Safety
 * `cfg` must be a live handle; `out` valid for one write.
 */
enum OsdStatus osd_coeffs_compute(const struct OsdConfig *cfg, struct OsdCoeffs **out);

/**
 * Effective linear rates `α̂_j`, one per element.
 *
 * # Safety
 * `coeffs` must be a live handle; `buf`, `cap`, `len` as in the module docs.
 */
enum OsdStatus osd_coeffs_hat_alpha(const struct OsdCoeffs *coeffs,
                                    double *buf,
                                    size_t cap,
                                    size_t *len);

/**
 * Deviation variances `Q_j`, one per element.
 *
 * # Safety
 * `coeffs` must be a live handle; `buf`, `cap`, `len` as in the module docs.
 */
enum OsdStatus osd_coeffs_deviation(const struct OsdCoeffs *coeffs,
                                    double *buf,
                                    size_t cap,
                                    size_t *len);

/**
 * # Safety
 * `coeffs` must come from `osd_coeffs_compute`; null is ignored.
 */
void osd_coeffs_free(struct OsdCoeffs *coeffs);

/**
 * Grid values at the horizon for one ensemble member of `target` (an
 * `OsdTarget` value), bitwise equal to the same member of a full ensemble run.
 *
 * # Safety
 * `cfg` must be a live handle; `buf`, `cap`, `len` as in the module docs.
 */
enum OsdStatus osd_simulate_member(const struct OsdConfig *cfg,
                                   uint32_t target,
                                   size_t member,
                                   double *buf,
                                   size_t cap,
                                   size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OVERLAP_SDE_H */
