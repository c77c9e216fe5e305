#ifndef MMFACE_H
#define MMFACE_H

#include <stddef.h>
#include <stdint.h>

typedef enum MmfGuidance {
  MMF_GUIDANCE_NONE = 0,
  MMF_GUIDANCE_SCALAR = 1,
  MMF_GUIDANCE_PER_MODALITY = 2,
} MmfGuidance;

// Result of every call.
typedef enum MmfStatus {
  MMF_STATUS_OK = 0,
  MMF_STATUS_NULL_POINTER = 1,
  MMF_STATUS_INVALID_ARGUMENT = 2,
  MMF_STATUS_IO = 3,
  MMF_STATUS_CHECKPOINT = 4,
  MMF_STATUS_NUMERIC = 5,
  MMF_STATUS_CONFIG = 6,
  MMF_STATUS_INTERNAL = 7,
} MmfStatus;

// Opaque model handle.
typedef struct MmfModel MmfModel;

// Condition payloads. A null pointer leaves that modality inactive.
// `mask` and `sketch` hold side² bytes, `attr` six bytes and `lowres`
// (side/4)² doubles.
typedef struct MmfConditions {
  const uint8_t *mask;
  const uint8_t *attr;
  const uint8_t *sketch;
  const double *lowres;
} MmfConditions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mmf_last_error(void);

// Library version as a static NUL-terminated string.
const char *mmf_version(void);

// Loads the checkpoint directory `path` into a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MmfStatus mmf_model_load(const char *path, struct MmfModel **out);

// Creates an untrained desk-sized model (`micro` nonzero selects the
// small test configuration) with the default schedule.
//
// # Safety
// `out` must be a valid pointer.
enum MmfStatus mmf_model_init(int32_t micro, uint64_t seed, struct MmfModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from this library and must not be used afterwards.
void mmf_model_free(struct MmfModel *model);

// Image side of the model, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mmf_model_side(const struct MmfModel *model);

// Number of scalar parameters, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mmf_model_param_count(const struct MmfModel *model);

// Draws `count` images into `out` (`count · side²` doubles, row-major).
// Image `i` depends only on `seed` and `i`. `w` holds `n_w` weights; it is
// ignored for [`MmfGuidance::None`]. `cond` may be null for unconditional
// sampling.
//
// # Safety
// Pointers must be valid for the lengths described above.
enum MmfStatus mmf_sample(const struct MmfModel *model,
                          const struct MmfConditions *cond,
                          enum MmfGuidance guidance,
                          const double *w,
                          size_t n_w,
                          uint64_t seed,
                          size_t count,
                          double *out,
                          size_t out_len);

// Renders the face of `seed` into `out` (`side²` doubles).
//
// # Safety
// `out` must be valid for `side²` doubles.
enum MmfStatus mmf_render_face(uint64_t seed, size_t side, double *out);

// Writes every condition of the face of `seed`. Null outputs are skipped.
//
// # Safety
// Non-null outputs must be valid for the lengths of [`MmfConditions`].
enum MmfStatus mmf_derive_conditions(uint64_t seed,
                                     size_t side,
                                     uint8_t *mask,
                                     uint8_t *attr,
                                     uint8_t *sketch,
                                     double *lowres);

// Mask agreement of an image with `mask` (`side²` class bytes).
//
// # Safety
// `pixels` and `mask` must be valid for `side²` elements, `out` for one double.
enum MmfStatus mmf_mask_accuracy(const double *pixels,
                                 size_t side,
                                 const uint8_t *mask,
                                 double *out);

// Attribute agreement of an image with six attribute bits.
//
// # Safety
// `pixels` must be valid for `side²` doubles, `attr` for six bytes, `out` for one double.
enum MmfStatus mmf_attr_accuracy(const double *pixels,
                                 size_t side,
                                 const uint8_t *attr,
                                 double *out);

// `n_b + (1/K) Σ_k w_k (n_k − n_b)` over maps of `len` values. `n_k` holds
// the K maps back to back.
//
// # Safety
// `n_b` and `out` must be valid for `len` doubles, `n_k` for `k · len`, `w` for `k`.
enum MmfStatus mmf_eam_combine(const double *n_b,
                               const double *n_k,
                               const double *w,
                               size_t k,
                               size_t len,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMFACE_H */
