#ifndef BIMODAL_CL_H
#define BIMODAL_CL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum BclStatus {
  BCL_STATUS_OK = 0,
  // Null pointer, non-UTF-8 string or out-of-range index.
  BCL_STATUS_INVALID_ARGUMENT = 1,
  BCL_STATUS_INVALID_CONFIG = 2,
  BCL_STATUS_DIMENSION_MISMATCH = 3,
  BCL_STATUS_CLASS_OUT_OF_RANGE = 4,
  BCL_STATUS_MALFORMED_DATASET = 5,
  BCL_STATUS_IO = 6,
  BCL_STATUS_DIVERGENCE = 7,
  // Any other engine error (empty inputs, non-finite values and so on).
  BCL_STATUS_NUMERIC = 8,
  BCL_STATUS_PANIC = 9,
} BclStatus;

// A synthetic or loaded dataset.
typedef struct BclDataset BclDataset;

// Trained encoder parameters.
typedef struct BclModel BclModel;

// The outcome of one continual run.
typedef struct BclRun BclRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bcl_version(void);

// Message of the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *bcl_last_error(void);

// Generates a Gaussian-cluster dataset (see `bimodal_cl::data::gen_synthetic`).
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum BclStatus bcl_dataset_generate(size_t num_classes,
                                    size_t per_class,
                                    size_t input_dim,
                                    double separation,
                                    double noise,
                                    uint64_t seed,
                                    struct BclDataset **out);

// Reads a dataset file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum BclStatus bcl_dataset_load(const char *path, struct BclDataset **out);

// Writes a dataset file.
//
// # Safety
// `dataset` must be a live handle and `path` a NUL-terminated string.
enum BclStatus bcl_dataset_save(const struct BclDataset *dataset, const char *path);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t bcl_dataset_len(const struct BclDataset *dataset);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t bcl_dataset_input_dim(const struct BclDataset *dataset);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t bcl_dataset_num_classes(const struct BclDataset *dataset);

// Releases a dataset. Null is a no-op.
//
// # Safety
// `dataset` must be null or a handle not yet freed.
void bcl_dataset_free(struct BclDataset *dataset);

// Splits `dataset` and trains one continual run as described by the TOML
// experiment config `config_toml` (`[split]` and `[run]` sections; `data`
// and `[output]` are ignored).
//
// # Safety
// `dataset` must be a live handle, `config_toml` a NUL-terminated string and
// `out` a valid handle slot.
enum BclStatus bcl_run(const struct BclDataset *dataset,
                       const char *config_toml,
                       struct BclRun **out);

// Number of tasks in the run, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t bcl_run_num_tasks(const struct BclRun *run);

// Accuracy on task `task_b`'s test split after training stage `stage_t`
// (both zero-based, `task_b <= stage_t`).
//
// # Safety
// `run` must be a live handle and `out` writable.
enum BclStatus bcl_run_accuracy(const struct BclRun *run,
                                size_t stage_t,
                                size_t task_b,
                                double *out);

// Aggregate accuracy after the last stage.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum BclStatus bcl_run_final_accuracy(const struct BclRun *run, double *out);

// Copies the aggregate accuracy after each stage into `buf`, which must
// hold exactly `bcl_run_num_tasks(run)` values.
//
// # Safety
// `run` must be a live handle and `buf` valid for `len` writes.
enum BclStatus bcl_run_curve(const struct BclRun *run, double *buf, size_t len);

// Extracts a copy of the final parameters as a model handle.
//
// # Safety
// `run` must be a live handle and `out` a valid handle slot.
enum BclStatus bcl_run_model(const struct BclRun *run, struct BclModel **out);

// Releases a run. Null is a no-op.
//
// # Safety
// `run` must be null or a handle not yet freed.
void bcl_run_free(struct BclRun *run);

// Number of parameters, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t bcl_model_param_len(const struct BclModel *model);

// Copies the flat parameter vector into `buf`, which must hold exactly
// `bcl_model_param_len(model)` values.
//
// # Safety
// `model` must be a live handle and `buf` valid for `len` writes.
enum BclStatus bcl_model_params(const struct BclModel *model, double *buf, size_t len);

// Cosine similarity between the embeddings of input `x` and class `class_id`.
//
// # Safety
// `model` must be a live handle, `x` valid for `x_len` reads and `out` writable.
enum BclStatus bcl_model_similarity(const struct BclModel *model,
                                    const double *x,
                                    size_t x_len,
                                    uint32_t class_id,
                                    double *out);

// Most similar class among `candidates` (ties go to the smallest id).
//
// # Safety
// `model` must be a live handle, `x` and `candidates` valid for their
// lengths and `out` writable.
enum BclStatus bcl_model_predict(const struct BclModel *model,
                                 const double *x,
                                 size_t x_len,
                                 const uint32_t *candidates,
                                 size_t num_candidates,
                                 uint32_t *out);

// Releases a model. Null is a no-op.
//
// # Safety
// `model` must be null or a handle not yet freed.
void bcl_model_free(struct BclModel *model);

// Worst-case weights `softmax(h / lambda)` over `k` per-class losses,
// written to `out` (length `k`).
//
// # Safety
// `h` must be valid for `k` reads and `out` for `k` writes.
enum BclStatus bcl_dro_weights(const double *h, size_t k, double lambda, double *out);

// KL-regularized worst-case objective `lambda * log mean exp(h / lambda)`.
//
// # Safety
// `h` must be valid for `k` reads and `out` writable.
enum BclStatus bcl_dro_objective(const double *h, size_t k, double lambda, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIMODAL_CL_H */
