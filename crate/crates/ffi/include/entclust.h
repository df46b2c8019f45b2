#ifndef ENTCLUST_H
#define ENTCLUST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EntclustStatus {
  ENTCLUST_STATUS_OK = 0,
  ENTCLUST_STATUS_NULL_POINTER = 1,
  ENTCLUST_STATUS_INVALID_ARGUMENT = 2,
  ENTCLUST_STATUS_DIMENSION_MISMATCH = 3,
  ENTCLUST_STATUS_BUFFER_TOO_SMALL = 4,
  ENTCLUST_STATUS_EMPTY_INPUT = 5,
  ENTCLUST_STATUS_DEGENERATE_CLUSTER = 6,
  ENTCLUST_STATUS_NON_FINITE = 7,
  ENTCLUST_STATUS_INFINITE_LOSS = 8,
  ENTCLUST_STATUS_DIVERGENCE = 9,
  ENTCLUST_STATUS_TRAINING_DIVERGED = 10,
  ENTCLUST_STATUS_PARSE = 11,
  ENTCLUST_STATUS_CONFIG = 12,
  ENTCLUST_STATUS_IO = 13,
  ENTCLUST_STATUS_PANIC = 14,
} EntclustStatus;

/**
 * Loss selector for [`EntclustTrainParams`].
 */
typedef enum EntclustLoss {
  ENTCLUST_LOSS_MI = 0,
  ENTCLUST_LOSS_MI_DECAY = 1,
  ENTCLUST_LOSS_MI_MM = 2,
  ENTCLUST_LOSS_MI_PP = 3,
  ENTCLUST_LOSS_OURS = 4,
  ENTCLUST_LOSS_MI_ADM = 5,
} EntclustLoss;

/**
 * Opaque dataset handle.
 */
typedef struct EntclustDataset EntclustDataset;

/**
 * Opaque softmax model handle.
 */
typedef struct EntclustModel EntclustModel;

/**
 * Training hyperparameters. Fill with [`entclust_train_params_default`] and adjust.
 */
typedef struct EntclustTrainParams {
  enum EntclustLoss loss;
  double lambda;
  double gamma;
  double beta;
  double lr;
  size_t epochs;
  size_t batch_size;
  uint64_t seed;
  /**
   * Solve pseudo-labels once per epoch instead of per batch.
   */
  bool per_epoch;
  bool shuffle;
  double em_tolerance;
  size_t em_max_iterations;
} EntclustTrainParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *entclust_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a successful call.
 * The pointer stays valid until the next call into the library on the same thread.
 */
const char *entclust_last_error_message(void);

/**
 * Static name of a status code, e.g. `"ok"` or `"dimension_mismatch"`.
 */
const char *entclust_status_name(enum EntclustStatus status);

/**
 * Copies a row-major `rows × cols` feature matrix and optional labels (`rows` entries, may be
 * NULL) into a new dataset.
 *
 * # Safety
 * `features` must point to `rows * cols` doubles and `labels`, when non-NULL, to `rows`
 * values; `out` must be a valid pointer.
 */
enum EntclustStatus entclust_dataset_from_arrays(const double *features,
                                                 size_t rows,
                                                 size_t cols,
                                                 const size_t *labels,
                                                 struct EntclustDataset **out);

/**
 * Loads a CSV file with a header row. `label_column` may be NULL for unlabeled data.
 *
 * # Safety
 * `path` and `label_column` must be NUL-terminated strings (or NULL for `label_column`).
 */
enum EntclustStatus entclust_dataset_load_csv(const char *path,
                                              const char *label_column,
                                              struct EntclustDataset **out);

/**
 * Loads the four MNIST IDX files from `dir` (70,000 × 784, pixels scaled to [−1, 1]).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum EntclustStatus entclust_dataset_load_mnist(const char *dir, struct EntclustDataset **out);

/**
 * Generates `m` points in `k` Gaussian blobs in `n` dimensions.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EntclustStatus entclust_dataset_generate_blobs(uint64_t seed,
                                                    size_t m,
                                                    size_t k,
                                                    size_t n,
                                                    double separation,
                                                    struct EntclustDataset **out);

/**
 * Writes the number of rows and columns of `dataset`.
 *
 * # Safety
 * `dataset` must be a live handle; `rows` and `cols` valid pointers.
 */
enum EntclustStatus entclust_dataset_shape(const struct EntclustDataset *dataset,
                                           size_t *rows,
                                           size_t *cols);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void entclust_dataset_free(struct EntclustDataset *dataset);

/**
 * Linear softmax model with `k` classes over `n` inputs, seeded initialization.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EntclustStatus entclust_model_new_linear(size_t k,
                                              size_t n,
                                              uint64_t seed,
                                              struct EntclustModel **out);

/**
 * Softmax model with one ReLU hidden layer of `width` units.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EntclustStatus entclust_model_new_hidden(size_t k,
                                              size_t n,
                                              size_t width,
                                              uint64_t seed,
                                              struct EntclustModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum EntclustStatus entclust_model_load(const char *path, struct EntclustModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum EntclustStatus entclust_model_save(const struct EntclustModel *model, const char *path);

/**
 * Writes the class count `K` and input dimension `N`.
 *
 * # Safety
 * `model` must be a live handle; `k` and `n` valid pointers.
 */
enum EntclustStatus entclust_model_shape(const struct EntclustModel *model, size_t *k, size_t *n);

/**
 * Class probabilities for `rows` inputs of dimension `cols`, written row-major into `out`
 * (`rows * K` values).
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` `out_len` doubles.
 */
enum EntclustStatus entclust_model_predict_proba(const struct EntclustModel *model,
                                                 const double *x,
                                                 size_t rows,
                                                 size_t cols,
                                                 double *out,
                                                 size_t out_len);

/**
 * Predicted cluster (argmax) for each of `rows` inputs.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` `out_len` values.
 */
enum EntclustStatus entclust_model_predict(const struct EntclustModel *model,
                                           const double *x,
                                           size_t rows,
                                           size_t cols,
                                           size_t *out,
                                           size_t out_len);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void entclust_model_free(struct EntclustModel *model);

/**
 * Defaults for `loss` with `k` clusters: lr 0.07, batch 250, 50 epochs, per-batch
 * pseudo-labels, shuffled batches, and the loss's default λ, γ and β.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EntclustStatus entclust_train_params_default(enum EntclustLoss loss,
                                                  size_t k,
                                                  struct EntclustTrainParams *out);

/**
 * Trains a copy of `model` on `dataset` and returns it in `out_model`. When the dataset is
 * labeled, the final Hungarian accuracy goes to `out_accuracy` (NaN otherwise); pass NULL to
 * skip it.
 *
 * # Safety
 * `dataset` and `model` must be live handles; `params` and `out_model` valid pointers.
 */
enum EntclustStatus entclust_train(const struct EntclustDataset *dataset,
                                   const struct EntclustModel *model,
                                   const struct EntclustTrainParams *params,
                                   struct EntclustModel **out_model,
                                   double *out_accuracy);

/**
 * Pseudo-labels for predictions `sigma` (`rows × k`, rows on the simplex) under a uniform
 * prior, by EM from a warm start at `sigma`. Writes `y` row-major into `y_out` and the number
 * of iterations run into `iterations` (may be NULL).
 *
 * # Safety
 * `sigma` must hold `rows * k` doubles and `y_out` `y_len` doubles.
 */
enum EntclustStatus entclust_solve_em(const double *sigma,
                                      size_t rows,
                                      size_t k,
                                      double lambda,
                                      double tolerance,
                                      size_t max_iterations,
                                      double *y_out,
                                      size_t y_len,
                                      size_t *iterations);

/**
 * Clustering accuracy of `pred` against `truth` (both `m` entries in `0..k`) under the best
 * one-to-one relabeling.
 *
 * # Safety
 * `pred` and `truth` must hold `m` values; `out` must be a valid pointer.
 */
enum EntclustStatus entclust_hungarian_accuracy(const size_t *pred,
                                                const size_t *truth,
                                                size_t m,
                                                size_t k,
                                                double *out);

/**
 * K-means (k-means++ seeding, best of `restarts` by inertia) on the dataset's features.
 * Writes one assignment per row into `assignments` and the inertia into `inertia` (may be
 * NULL).
 *
 * # Safety
 * `dataset` must be a live handle; `assignments` must hold `len` values.
 */
enum EntclustStatus entclust_kmeans(const struct EntclustDataset *dataset,
                                    size_t k,
                                    uint64_t seed,
                                    size_t restarts,
                                    size_t *assignments,
                                    size_t len,
                                    double *inertia);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTCLUST_H */
