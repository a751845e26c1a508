#ifndef EDGELAB_H
#define EDGELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EdgelabStatus {
  EDGELAB_STATUS_OK = 0,
  EDGELAB_STATUS_NULL_POINTER = 1,
  EDGELAB_STATUS_INVALID_UTF8 = 2,
  EDGELAB_STATUS_IO = 3,
  EDGELAB_STATUS_PARSE = 4,
  EDGELAB_STATUS_VALIDATION = 5,
  EDGELAB_STATUS_CONFIG = 6,
  EDGELAB_STATUS_NUMERICAL = 7,
  EDGELAB_STATUS_CHECKPOINT = 8,
  EDGELAB_STATUS_OUT_OF_RANGE = 9,
  EDGELAB_STATUS_BUFFER_TOO_SMALL = 10,
  EDGELAB_STATUS_PANIC = 11,
} EdgelabStatus;

/**
 * A loaded graph with its (possibly empty) edge labels.
 */
typedef struct EdgelabDataset EdgelabDataset;

typedef struct EdgelabEvalReport EdgelabEvalReport;

/**
 * Trained parameters together with the node ids they belong to.
 */
typedef struct EdgelabModel EdgelabModel;

/**
 * Training settings. `unsupervised_round_batches = 0` means one pass
 * over the walk corpus per round.
 */
typedef struct EdgelabTrainConfig {
  double lambda;
  size_t batches_per_round;
  size_t structural_batch;
  size_t relational_batch;
  size_t walks_per_node;
  size_t walk_length;
  size_t window;
  size_t dim;
  size_t negatives;
  double noise_power;
  size_t hidden;
  double learning_rate;
  size_t early_stop_window;
  size_t max_rounds;
  double validation_fraction;
  size_t unsupervised_rounds;
  size_t unsupervised_round_batches;
  bool restore_best;
  uint64_t seed;
} EdgelabTrainConfig;

/**
 * Node-classification settings. `ratios` points to `ratio_count`
 * training ratios; null with a count of 0 selects 5%, 10% and 20%.
 */
typedef struct EdgelabEvalConfig {
  const double *ratios;
  size_t ratio_count;
  size_t repeats;
  double l2_strength;
  bool normalize;
  uint64_t seed;
} EdgelabEvalConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *edgelab_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *edgelab_last_error(void);

void edgelab_clear_error(void);

/**
 * Fills `out` with the default training settings.
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum EdgelabStatus edgelab_train_config_default(struct EdgelabTrainConfig *out);

/**
 * Fills `out` with the default evaluation settings (ratios left null).
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum EdgelabStatus edgelab_eval_config_default(struct EdgelabEvalConfig *out);

/**
 * Loads an edge list and, if `edge_labels_path` is non-null, its edge
 * labels.
 *
 * # Safety
 * Paths must be null or NUL-terminated; `out` must be null or writable.
 */
enum EdgelabStatus edgelab_dataset_load(const char *edges_path,
                                        const char *edge_labels_path,
                                        struct EdgelabDataset **out);

/**
 * # Safety
 * `dataset` must be null or a live dataset.
 */
size_t edgelab_dataset_node_count(const struct EdgelabDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live dataset.
 */
size_t edgelab_dataset_edge_count(const struct EdgelabDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live dataset.
 */
size_t edgelab_dataset_labeled_edge_count(const struct EdgelabDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a pointer returned by
 * [`edgelab_dataset_load`] that has not been freed.
 */
void edgelab_dataset_free(struct EdgelabDataset *dataset);

/**
 * Trains embeddings on `dataset`.
 *
 * # Safety
 * `dataset` and `config` must be null or live; `out` null or writable.
 */
enum EdgelabStatus edgelab_train(const struct EdgelabDataset *dataset,
                                 const struct EdgelabTrainConfig *config,
                                 struct EdgelabModel **out);

/**
 * # Safety
 * `model` must be null or live.
 */
size_t edgelab_model_dim(const struct EdgelabModel *model);

/**
 * # Safety
 * `model` must be null or live.
 */
size_t edgelab_model_node_count(const struct EdgelabModel *model);

/**
 * Rounds run by the training call that produced `model`; 0 for a model
 * loaded from a checkpoint.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t edgelab_model_rounds(const struct EdgelabModel *model);

/**
 * Dense index of node `id`.
 *
 * # Safety
 * `model` live, `id` NUL-terminated, `out` writable.
 */
enum EdgelabStatus edgelab_model_node_index(const struct EdgelabModel *model,
                                            const char *id,
                                            size_t *out);

/**
 * Copies the id of node `index` with its NUL into `buf`. `needed`, if
 * non-null, receives the required size including the NUL.
 *
 * # Safety
 * `model` live; `buf` writable for `len` bytes unless `len` is 0.
 */
enum EdgelabStatus edgelab_model_node_id(const struct EdgelabModel *model,
                                         size_t index,
                                         char *buf,
                                         size_t len,
                                         size_t *needed);

/**
 * Copies the embedding of node `index` into `out[0..dim]`.
 *
 * # Safety
 * `model` live; `out` writable for `len` doubles.
 */
enum EdgelabStatus edgelab_model_embedding(const struct EdgelabModel *model,
                                           size_t index,
                                           double *out,
                                           size_t len);

/**
 * Writes the embeddings in the text format read by `edgelab evaluate`.
 *
 * # Safety
 * `model` live; `path` NUL-terminated.
 */
enum EdgelabStatus edgelab_model_write_embeddings(const struct EdgelabModel *model,
                                                  const char *path);

/**
 * # Safety
 * `model` live; `path` NUL-terminated.
 */
enum EdgelabStatus edgelab_model_save_checkpoint(const struct EdgelabModel *model,
                                                 const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum EdgelabStatus edgelab_model_load_checkpoint(const char *path, struct EdgelabModel **out);

/**
 * # Safety
 * `model` must be null or an unfreed model from this library.
 */
void edgelab_model_free(struct EdgelabModel *model);

/**
 * Scores the model's embeddings against a node-label file. Labeled
 * nodes unknown to the model are an error.
 *
 * # Safety
 * Pointers live or null; `node_labels_path` NUL-terminated.
 */
enum EdgelabStatus edgelab_evaluate_model(const struct EdgelabModel *model,
                                          const char *node_labels_path,
                                          const struct EdgelabEvalConfig *config,
                                          struct EdgelabEvalReport **out);

/**
 * Like [`edgelab_evaluate_model`] for an embedding text file.
 *
 * # Safety
 * Paths NUL-terminated; `config` live; `out` writable.
 */
enum EdgelabStatus edgelab_evaluate_file(const char *embeddings_path,
                                         const char *node_labels_path,
                                         const struct EdgelabEvalConfig *config,
                                         struct EdgelabEvalReport **out);

/**
 * # Safety
 * `report` must be null or live.
 */
size_t edgelab_eval_report_ratio_count(const struct EdgelabEvalReport *report);

/**
 * Training ratio, mean and standard deviation of Macro-F1 (fractions,
 * not percent) for entry `index`.
 *
 * # Safety
 * `report` live; output pointers writable or null (skipped).
 */
enum EdgelabStatus edgelab_eval_report_get(const struct EdgelabEvalReport *report,
                                           size_t index,
                                           double *ratio,
                                           double *mean,
                                           double *std);

/**
 * # Safety
 * `report` must be null or an unfreed report from this library.
 */
void edgelab_eval_report_free(struct EdgelabEvalReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGELAB_H */
