#ifndef FLATCOVER_H
#define FLATCOVER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible call.
typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_INPUT = 2,
  FC_STATUS_DEGENERATE = 3,
  FC_STATUS_NOT_NORMAL_FORM = 4,
  FC_STATUS_NOT_FLAT = 5,
  FC_STATUS_EMPTY_COVER = 6,
  FC_STATUS_UNSUPPORTED = 7,
  FC_STATUS_FAILED = 8,
  FC_STATUS_PANIC = 9,
} FcStatus;

// Opaque cover handle.
typedef struct FcCover FcCover;

// Opaque phase handle.
typedef struct FcPhase FcPhase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *fc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fc_version(void);

// Builds a phase of the given degree from `n` terms `coeffs[i]·ξ₁^j[i]·ξ₂^k[i]`.
//
// # Safety
// `j`, `k` and `coeffs` must each point to `n` readable values; `out` must
// be writable.
enum FcStatus fc_phase_new(uint32_t degree,
                           const uint32_t *j,
                           const uint32_t *k,
                           const double *coeffs,
                           size_t n,
                           struct FcPhase **out);

// Parses the `{"degree": d, "coeffs": [[j, k, v], …]}` format.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum FcStatus fc_phase_from_json(const char *json, struct FcPhase **out);

// # Safety
// `p` must come from `fc_phase_new`/`fc_phase_from_json` and not be freed
// twice. Null is ignored.
void fc_phase_free(struct FcPhase *p);

// # Safety
// `phase` must be a live handle, `xi` two readable doubles, `out` writable.
enum FcStatus fc_phase_eval(const struct FcPhase *phase, const double *xi, double *out);

// Certified upper bound on the flatness defect of the box
// `(cx, cy, e1x, e1y, e2x, e2y)` (half-extent edges).
//
// # Safety
// `phase` must be a live handle, `bx` six readable doubles, `out` writable.
enum FcStatus fc_flat_defect(const struct FcPhase *phase, const double *bx, double *out);

// # Safety
// As for [`fc_flat_defect`].
enum FcStatus fc_is_flat(const struct FcPhase *phase,
                         const double *bx,
                         double delta,
                         double a,
                         bool *out);

// Rotated-rectangle cover for a phase in perturbed hyperbolic normal form.
//
// # Safety
// `phase` must be a live handle and `out` writable.
enum FcStatus fc_cover_build_hp(const struct FcPhase *phase,
                                double delta,
                                double a,
                                struct FcCover **out);

// # Safety
// `out` must be writable.
enum FcStatus fc_cover_canonical(double delta, struct FcCover **out);

// # Safety
// `out` must be writable.
enum FcStatus fc_cover_hp_axis(double delta, struct FcCover **out);

// # Safety
// `c` must come from an `fc_cover_*` constructor and not be freed twice.
// Null is ignored.
void fc_cover_free(struct FcCover *c);

// # Safety
// `c` must be a live handle (null gives 0).
size_t fc_cover_len(const struct FcCover *c);

// Member `i` as `(cx, cy, e1x, e1y, e2x, e2y)`.
//
// # Safety
// `c` must be a live handle and `out` six writable doubles.
enum FcStatus fc_cover_member(const struct FcCover *c, size_t i, double *out);

// Verifies flatness, coverage and overlap on a `grid × grid` sample.
// `passed` receives the verdict and `overlap_max` the sampled overlap.
//
// # Safety
// Handles must be live and the output pointers writable.
enum FcStatus fc_cover_verify(const struct FcCover *c,
                              const struct FcPhase *phase,
                              double eps,
                              size_t grid,
                              bool *passed,
                              uint32_t *overlap_max);

// Serialises the cover; free the string with [`fc_string_free`].
//
// # Safety
// `c` must be a live handle and `out` writable.
enum FcStatus fc_cover_to_json(const struct FcCover *c, char **out);

// # Safety
// `s` must come from this library and not be freed twice. Null is ignored.
void fc_string_free(char *s);

// `min_{1≤b≤b_max} |a + √2 b| b^{1+eps}` and its argmin `b`.
//
// # Safety
// `min_value` and `b` must be writable.
enum FcStatus fc_pell_gap(uint64_t b_max, double eps, double *min_value, uint64_t *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLATCOVER_H */
