#ifndef ENGAGEMENT_H
#define ENGAGEMENT_H

#include <stddef.h>
#include <stdint.h>

#define ENG_BEHAVIORAL_ON_TASK 0

#define ENG_BEHAVIORAL_OFF_TASK 1

#define ENG_BEHAVIORAL_CANT_DECIDE 2

#define ENG_EMOTIONAL_SATISFIED 0

#define ENG_EMOTIONAL_CONFUSED 1

#define ENG_EMOTIONAL_BORED 2

#define ENG_EMOTIONAL_CANT_DECIDE 3

#define ENG_COMBINED_ENGAGED 0

#define ENG_COMBINED_DISENGAGED 1

#define ENG_COMBINED_UNDECIDABLE 2

// Pixels in one 48×48 face image.
#define ENG_IMAGE_PIXELS 2304

typedef enum EngStatus {
  ENG_STATUS_OK = 0,
  ENG_STATUS_NULL_POINTER = 1,
  ENG_STATUS_INVALID_ARGUMENT = 2,
  ENG_STATUS_IO = 3,
  ENG_STATUS_CHECKPOINT = 4,
  ENG_STATUS_SHAPE = 5,
  ENG_STATUS_NORMALIZATION = 6,
  ENG_STATUS_METRIC = 7,
  ENG_STATUS_PANIC = 8,
  ENG_STATUS_INTERNAL = 9,
} EngStatus;

// A loaded checkpoint ready for inference. Opaque to C.
typedef struct EngModel EngModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// success. Valid until the next call into this library on the same thread.
const char *eng_last_error(void);

// Static, NUL-terminated crate version.
const char *eng_version(void);

// Loads a checkpoint. It must carry pixel statistics.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EngStatus eng_model_load(const char *path, struct EngModel **out);

// # Safety
// `model` must be NULL or a handle from [`eng_model_load`] not yet freed.
void eng_model_free(struct EngModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum EngStatus eng_model_num_classes(const struct EngModel *model, size_t *out);

// Class probabilities for one row-major 48×48 grayscale face. Writes
// `num_classes` values to `probs` and the arg-max to `class_out` (which
// may be NULL).
//
// # Safety
// `pixels` must hold `pixels_len` bytes, `probs` room for `probs_len`
// floats.
enum EngStatus eng_model_predict(const struct EngModel *model,
                                 const uint8_t *pixels,
                                 size_t pixels_len,
                                 float *probs,
                                 size_t probs_len,
                                 size_t *class_out);

// Per-image normalization: subtract the mean, scale to norm 100.
//
// # Safety
// `pixels` must hold `len` bytes and `out` room for `len` doubles.
enum EngStatus eng_normalize_image(const uint8_t *pixels, size_t len, double *out);

// Combines one behavioral and one emotional judgment into an
// `ENG_COMBINED_*` value.
//
// # Safety
// `out` must be writable.
enum EngStatus eng_combine_dimensions(int32_t behavioral_label,
                                      int32_t emotional_label,
                                      int32_t *out);

// Learning rate `a0 · r^(g/s)` at global step `g`.
//
// # Safety
// `out` must be writable.
enum EngStatus eng_lr_at_step(double a0, double r, uint64_t s, uint64_t g, double *out);

// # Safety
// `out` must be writable.
enum EngStatus eng_accuracy(uint64_t tp, uint64_t tn, uint64_t fp, uint64_t fn_, double *out);

// F1 of the positive class; 0 when precision or recall is undefined.
//
// # Safety
// `out` must be writable.
enum EngStatus eng_f1(uint64_t tp, uint64_t fp, uint64_t fn_, double *out);

// ROC AUC of `scores` against `positives` (nonzero = positive class).
//
// # Safety
// `scores` and `positives` must each hold `n` elements.
enum EngStatus eng_auc(const double *scores, const uint8_t *positives, size_t n, double *out);

// Fleiss' kappa over a row-major `items × categories` count matrix.
//
// # Safety
// `counts` must hold `items * categories` elements.
enum EngStatus eng_fleiss_kappa(const uint32_t *counts,
                                size_t items,
                                size_t categories,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENGAGEMENT_H */
