/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#ifndef PVAD_H
#define PVAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PVAD_N_MELS 40

#define PVAD_EMBEDDING_DIM 256

#define PVAD_N_CLASSES 3

typedef enum {
  PVAD_STATUS_OK = 0,
  PVAD_STATUS_NULL_POINTER = 1,
  PVAD_STATUS_INVALID_ARGUMENT = 2,
  PVAD_STATUS_SHAPE = 3,
  PVAD_STATUS_IO = 4,
  PVAD_STATUS_CHECKPOINT = 5,
  PVAD_STATUS_NUMERIC = 6,
  PVAD_STATUS_DEGENERATE = 7,
  PVAD_STATUS_BUFFER_TOO_SMALL = 8,
  PVAD_STATUS_INTERNAL = 9,
} PvadStatus;

/**
 * Opaque model handle.
 */
typedef struct PvadModel PvadModel;

typedef struct {
  double w_plus;
  double w_minus;
  double statistic;
  size_t n;
  double p_greater;
  double p_less;
  double p_two_sided;
  bool exact;
} PvadWilcoxon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Toolkit version as a static NUL-terminated string.
 */
const char *pvad_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on this thread.
 */
const char *pvad_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
PvadStatus pvad_model_load(const char *path, PvadModel **out);

/**
 * Builds a freshly initialized model: "DSC", "EF", "LF", "CLF" or "DCLF".
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
PvadStatus pvad_model_build(const char *variant, uint64_t seed, PvadModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void pvad_model_free(PvadModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
PvadStatus pvad_model_parameter_count(const PvadModel *model, size_t *out);

/**
 * Per-frame posteriors `(p_ts, p_nts, p_ns)` written row-major to `out`
 * (`n_frames * 3` values). `features` holds `n_frames * PVAD_N_MELS`
 * log-mel values as produced by [`pvad_log_mel_features`]. A null or
 * all-zero `enrollment` means no enrollment; otherwise it holds
 * `PVAD_EMBEDDING_DIM` values and is normalized.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
PvadStatus pvad_model_forward(const PvadModel *model,
                              const double *features,
                              size_t n_frames,
                              const double *enrollment,
                              double *out);

/**
 * Number of feature frames for a signal of `n_samples` at 16 kHz.
 */
size_t pvad_frame_count(size_t n_samples);

/**
 * Log-mel features of 16 kHz mono samples in [-1, 1]. Writes
 * `pvad_frame_count(n_samples) * PVAD_N_MELS` values to `out`, whose
 * capacity in values is `out_len`, and the frame count to `n_frames`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
PvadStatus pvad_log_mel_features(const float *samples,
                                 size_t n_samples,
                                 double *out,
                                 size_t out_len,
                                 size_t *n_frames);

/**
 * Equal error rate of `scores` against 0/1 `labels`.
 *
 * # Safety
 * Pointers must be valid for `n` elements; outputs may not be null.
 */
PvadStatus pvad_eer(const double *scores,
                    const uint8_t *labels,
                    size_t n,
                    double *eer_out,
                    double *threshold_out);

/**
 * Wilcoxon signed-rank test on paired differences.
 *
 * # Safety
 * `diffs` must be valid for `n` elements and `out` non-null.
 */
PvadStatus pvad_wilcoxon(const double *diffs, size_t n, PvadWilcoxon *out);

/**
 * Score-combination posterior from a VAD posterior and a speaker cosine.
 * With `has_cosine == false` the cosine is ignored (no enrollment).
 *
 * # Safety
 * `out` must be valid for 3 values.
 */
PvadStatus pvad_dsc_combine(double p_s, double p_ns, double cosine, bool has_cosine, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVAD_H */
