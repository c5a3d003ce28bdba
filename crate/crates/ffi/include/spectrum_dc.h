/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef SPECTRUM_DC_H
#define SPECTRUM_DC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SDC_STATUS_OK = 0,
  SDC_STATUS_NULL_POINTER = 1,
  SDC_STATUS_INVALID_ARGUMENT = 2,
  SDC_STATUS_IO = 3,
  SDC_STATUS_FORMAT = 4,
  SDC_STATUS_VERSION = 5,
  SDC_STATUS_SHAPE = 6,
  SDC_STATUS_DATA = 7,
  SDC_STATUS_CONFIG = 8,
  SDC_STATUS_EMPTY_SET = 9,
  SDC_STATUS_DEGENERATE = 10,
  SDC_STATUS_MISSING_ARTIFACT = 11,
  SDC_STATUS_BUFFER_TOO_SMALL = 12,
  SDC_STATUS_PANIC = 13,
  SDC_STATUS_OTHER = 14,
} SdcStatus;

/**
 * A dense sample × feature matrix of doubles.
 */
typedef struct SdcFeatures SdcFeatures;

/**
 * A trained CNN loaded from a checkpoint.
 */
typedef struct SdcModel SdcModel;

/**
 * A fitted PCA projection.
 */
typedef struct SdcPca SdcPca;

/**
 * Normalized spectrogram tiles.
 */
typedef struct SdcTiles SdcTiles;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next `sdc_*` call on the same thread.
 */
const char *sdc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdc_version(void);

/**
 * Number of W×W tiles cut from a `bins × steps` recording.
 *
 * # Safety
 * `out_count` must be a valid pointer.
 */
SdcStatus sdc_tile_count(size_t bins, size_t steps, size_t window, size_t *out_count);

/**
 * Loads an SPTL tile file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
SdcStatus sdc_tiles_load(const char *path, SdcTiles **out);

/**
 * Segments a row-major `bins × steps` recording (dBm) into normalized tiles.
 *
 * # Safety
 * `values` must point to `bins * steps` floats and `out` be a valid pointer.
 */
SdcStatus sdc_tiles_from_psd(const float *values,
                             size_t bins,
                             size_t steps,
                             size_t window,
                             SdcTiles **out);

/**
 * # Safety
 * `tiles` must be a live handle or NULL (returns 0).
 */
size_t sdc_tiles_len(const SdcTiles *tiles);

/**
 * # Safety
 * `tiles` must be a live handle or NULL (returns 0).
 */
size_t sdc_tiles_window(const SdcTiles *tiles);

/**
 * # Safety
 * `tiles` must come from this library and not be used afterwards.
 */
void sdc_tiles_free(SdcTiles *tiles);

/**
 * Copies a row-major `rows × dim` matrix into a new handle.
 *
 * # Safety
 * `values` must point to `rows * dim` doubles and `out` be a valid pointer.
 */
SdcStatus sdc_features_new(const double *values, size_t rows, size_t dim, SdcFeatures **out);

/**
 * One row per tile, pixels in row-major order.
 *
 * # Safety
 * `tiles` must be a live handle and `out` a valid pointer.
 */
SdcStatus sdc_features_flatten(const SdcTiles *tiles, SdcFeatures **out);

/**
 * # Safety
 * `f` must be a live handle or NULL (returns 0).
 */
size_t sdc_features_rows(const SdcFeatures *f);

/**
 * # Safety
 * `f` must be a live handle or NULL (returns 0).
 */
size_t sdc_features_dim(const SdcFeatures *f);

/**
 * Copies the matrix, row-major, into `buf` of capacity `len`.
 *
 * # Safety
 * `f` must be a live handle and `buf` point to `len` writable doubles.
 */
SdcStatus sdc_features_copy(const SdcFeatures *f, double *buf, size_t len);

/**
 * # Safety
 * `f` must come from this library and not be used afterwards.
 */
void sdc_features_free(SdcFeatures *f);

/**
 * Fits the top `n` principal components.
 *
 * # Safety
 * `x` must be a live handle and `out` a valid pointer.
 */
SdcStatus sdc_pca_fit(const SdcFeatures *x, size_t n, SdcPca **out);

/**
 * # Safety
 * `pca` must be a live handle or NULL (returns 0).
 */
size_t sdc_pca_components(const SdcPca *pca);

/**
 * # Safety
 * `pca` and `x` must be live handles and `out` a valid pointer.
 */
SdcStatus sdc_pca_transform(const SdcPca *pca, const SdcFeatures *x, SdcFeatures **out);

/**
 * Explained variance ratio per component, written to `buf`.
 *
 * # Safety
 * `pca` must be a live handle and `buf` point to `len` writable doubles.
 */
SdcStatus sdc_pca_evr(const SdcPca *pca, double *buf, size_t len);

/**
 * Fewest leading components whose cumulative EVR reaches `threshold`.
 *
 * # Safety
 * `pca` must be a live handle and `out` a valid pointer.
 */
SdcStatus sdc_pca_components_for_variance(const SdcPca *pca, double threshold, size_t *out);

/**
 * # Safety
 * `pca` must come from this library and not be used afterwards.
 */
void sdc_pca_free(SdcPca *pca);

/**
 * K-means++ with Lloyd iterations. Writes one label per row to `labels`
 * and, when `out_centroids` is not NULL, the `k × dim` centroids.
 *
 * # Safety
 * `x` must be a live handle, `labels` point to `rows` writable values,
 * `out_centroids` be NULL or point to `k * dim` doubles, and `out_inertia`
 * be NULL or valid.
 */
SdcStatus sdc_kmeans(const SdcFeatures *x,
                     size_t k,
                     uint64_t seed,
                     size_t restarts,
                     uint32_t *labels,
                     double *out_centroids,
                     double *out_inertia);

/**
 * Mean silhouette over at most `max_samples` rows drawn with `seed`.
 *
 * # Safety
 * `x` must be a live handle, `labels` point to `rows` values and `out` be
 * valid.
 */
SdcStatus sdc_silhouette(const SdcFeatures *x,
                         const uint32_t *labels,
                         size_t max_samples,
                         uint64_t seed,
                         double *out);

/**
 * Normalized mutual information of two labelings of length `n`.
 *
 * # Safety
 * `a` and `b` must point to `n` values and `out` be valid.
 */
SdcStatus sdc_nmi(const uint32_t *a, const uint32_t *b, size_t n, double *out);

/**
 * VAT on `size` rows drawn with `seed`. Writes the visit order (indices
 * into the original rows) to `order`, and when the pointers are not NULL
 * the reordered distances and the iVAT matrix, each `size × size`.
 *
 * # Safety
 * `x` must be a live handle, `order` point to `size` writable values and
 * the matrix outputs be NULL or point to `size * size` doubles.
 */
SdcStatus sdc_vat(const SdcFeatures *x,
                  size_t size,
                  uint64_t seed,
                  size_t *order,
                  double *out_vat,
                  double *out_ivat);

/**
 * Loads the network from an SPCK checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
SdcStatus sdc_model_load(const char *path, SdcModel **out);

/**
 * # Safety
 * `m` must be a live handle or NULL (returns 0).
 */
size_t sdc_model_window(const SdcModel *m);

/**
 * # Safety
 * `m` must be a live handle or NULL (returns 0).
 */
size_t sdc_model_feature_dim(const SdcModel *m);

/**
 * Pooled CNN features of every tile, in evaluation mode.
 *
 * # Safety
 * `m` and `tiles` must be live handles and `out` a valid pointer.
 */
SdcStatus sdc_model_extract(const SdcModel *m, const SdcTiles *tiles, SdcFeatures **out);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void sdc_model_free(SdcModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRUM_DC_H */
