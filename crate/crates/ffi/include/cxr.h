#ifndef CXR_H
#define CXR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum CxrStatus {
  CXR_STATUS_OK = 0,
  CXR_STATUS_NULL_POINTER = 1,
  CXR_STATUS_INVALID_ARGUMENT = 2,
  CXR_STATUS_IO = 3,
  CXR_STATUS_BAD_MAGIC = 4,
  CXR_STATUS_CRC_MISMATCH = 5,
  CXR_STATUS_SPEC_MISMATCH = 6,
  CXR_STATUS_SHAPE_MISMATCH = 7,
  /*
   A Rust panic was caught at the boundary.
   */
  CXR_STATUS_PANIC = 8,
} CxrStatus;

/*
 A trained network loaded from a checkpoint.
 */
typedef struct CxrNetwork CxrNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null after a
 successful call. Valid until the next call on this thread.
 */
const char *cxr_last_error_message(void);

/*
 Loads a checkpoint. On success `*out` owns a new handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CxrStatus cxr_network_load(const char *path, struct CxrNetwork **out);

/*
 Releases a handle from [`cxr_network_load`]. Null is ignored.

 # Safety
 `net` must be null or a handle not yet freed.
 */
void cxr_network_free(struct CxrNetwork *net);

/*
 # Safety
 `net` must be a live handle and `out` a valid pointer.
 */
enum CxrStatus cxr_network_num_classes(const struct CxrNetwork *net, size_t *out);

/*
 Expected input height and width in pixels (one gray channel).

 # Safety
 `net` must be a live handle; `height` and `width` valid pointers.
 */
enum CxrStatus cxr_network_input_size(const struct CxrNetwork *net, size_t *height, size_t *width);

/*
 Class probabilities for `n` images of `height * width` floats in
 `[0, 1]`, written row-major to `probs` (`probs_len >= n * classes`).

 # Safety
 `net` must be a live handle; buffers must hold the stated lengths.
 */
enum CxrStatus cxr_network_predict_proba(const struct CxrNetwork *net,
                                         const float *pixels,
                                         size_t n,
                                         float *probs,
                                         size_t probs_len);

/*
 Most probable class per image (ties go to the lowest index), written
 to `classes[0..n]`.

 # Safety
 As [`cxr_network_predict_proba`]; `classes` holds `n` entries.
 */
enum CxrStatus cxr_network_predict(const struct CxrNetwork *net,
                                   const float *pixels,
                                   size_t n,
                                   size_t *classes);

/*
 `out = clamp(round(alpha * in + beta))`.

 # Safety
 `pixels` and `out` hold `width * height` bytes.
 */
enum CxrStatus cxr_adjust_brightness_contrast(const uint8_t *pixels,
                                              size_t width,
                                              size_t height,
                                              double alpha,
                                              double beta,
                                              uint8_t *out);

/*
 # Safety
 `pixels` and `out` hold `width * height` bytes.
 */
enum CxrStatus cxr_histogram_equalize(const uint8_t *pixels,
                                      size_t width,
                                      size_t height,
                                      uint8_t *out);

/*
 Upper and lower ternary-pattern code maps for threshold `t`.

 # Safety
 `pixels`, `upper` and `lower` hold `width * height` bytes.
 */
enum CxrStatus cxr_local_ternary_pattern(const uint8_t *pixels,
                                         size_t width,
                                         size_t height,
                                         uint8_t t,
                                         uint8_t *upper,
                                         uint8_t *lower);

/*
 Binary output: 255 where the pixel exceeds its Gaussian-weighted
 `block × block` neighbourhood mean minus `c`, else 0.

 # Safety
 `pixels` and `out` hold `width * height` bytes.
 */
enum CxrStatus cxr_adaptive_threshold(const uint8_t *pixels,
                                      size_t width,
                                      size_t height,
                                      size_t block,
                                      double c,
                                      uint8_t *out);

/*
 Histogram equalization followed by adaptive thresholding.

 # Safety
 `pixels` and `out` hold `width * height` bytes.
 */
enum CxrStatus cxr_hybrid_preprocess(const uint8_t *pixels,
                                     size_t width,
                                     size_t height,
                                     size_t block,
                                     double c,
                                     uint8_t *out);

/*
 Area under the ROC curve; `labels[i]` nonzero marks a positive.

 # Safety
 `scores` and `labels` hold `n` entries; `auc` is a valid pointer.
 */
enum CxrStatus cxr_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *auc);

/*
 Precision, recall and F1 from one-vs-rest counts. Values with a zero
 denominator are written as NaN.

 # Safety
 The three output pointers must be valid.
 */
enum CxrStatus cxr_precision_recall_f1(uint64_t tp,
                                       uint64_t fp,
                                       uint64_t fn_,
                                       double *precision,
                                       double *recall,
                                       double *f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CXR_H */
