#ifndef PHONECLS_H
#define PHONECLS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INVALID_ARGUMENT = 2,
  // Invalid configuration or inputs that contradict it.
  PC_STATUS_CONFIG = 3,
  // Malformed or inconsistent data.
  PC_STATUS_DATA = 4,
  PC_STATUS_RUNTIME = 5,
  PC_STATUS_BUFFER_TOO_SMALL = 6,
  PC_STATUS_PANIC = 7,
} PcStatus;

// Utterance feature matrix (frames × 120).
typedef struct PcFeatures PcFeatures;

// Trained classifier loaded from a checkpoint.
typedef struct PcModel PcModel;

// Scored frames: true and predicted class per frame, optional speaker.
typedef struct PcPredictions PcPredictions;

typedef struct PcInterval {
  double point;
  double low;
  double high;
  double half_width;
} PcInterval;

typedef struct PcCorrelation {
  double r;
  double slope;
  double intercept;
} PcCorrelation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *pc_last_error(void);

const char *pc_version(void);

// Size of the phone inventory, silence included.
size_t pc_num_classes(void);

// Builds a prediction set from parallel arrays. `speaker_ids` may be null;
// otherwise it holds `n` NUL-terminated strings.
//
// # Safety
// Array arguments must point to `n` readable elements.
enum PcStatus pc_predictions_new(const size_t *true_labels,
                                 const size_t *predicted_labels,
                                 const char *const *speaker_ids,
                                 size_t n,
                                 size_t num_classes,
                                 struct PcPredictions **out_handle);

// # Safety
// `handle` must come from `pc_predictions_new` and not be used afterwards.
void pc_predictions_free(struct PcPredictions *handle);

// Mean per-phone accuracy in percent over the phones present. A negative
// `exclude_label` keeps every phone.
//
// # Safety
// `preds` must be a live handle and `out_value` writable.
enum PcStatus pc_balanced_accuracy(const struct PcPredictions *preds,
                                   int64_t exclude_label,
                                   double *out_value);

// Frame accuracy in percent.
//
// # Safety
// `preds` must be a live handle and `out_value` writable.
enum PcStatus pc_micro_accuracy(const struct PcPredictions *preds, double *out_value);

// Percentile bootstrap interval of balanced accuracy. Resamples frames
// within each phone, or whole speakers when `by_speaker` is set.
//
// # Safety
// `preds` must be a live handle and `out_interval` writable.
enum PcStatus pc_bootstrap_balanced_accuracy(const struct PcPredictions *preds,
                                             int64_t exclude_label,
                                             size_t n_resamples,
                                             double alpha,
                                             uint64_t seed,
                                             bool by_speaker,
                                             struct PcInterval *out_interval);

// Row-normalised confusion percentages, row-major `k × k` with `k` the
// set's class count. Rows of absent phones are zero.
//
// # Safety
// `out_values` must hold `len` writable doubles.
enum PcStatus pc_confusion_matrix(const struct PcPredictions *preds,
                                  double *out_values,
                                  size_t len);

// # Safety
// `x` and `y` must point to `n` readable doubles.
enum PcStatus pc_pearson(const double *x, const double *y, size_t n, double *out_r);

// Pearson r plus the least-squares line `y = slope·x + intercept`.
//
// # Safety
// `x` and `y` must point to `n` readable doubles.
enum PcStatus pc_correlate(const double *x,
                           const double *y,
                           size_t n,
                           struct PcCorrelation *out_fit);

// Log-mel statics, deltas and delta-deltas with default settings.
// Audio at other rates is resampled to 16 kHz first.
//
// # Safety
// `samples` must point to `n` readable floats.
enum PcStatus pc_features_new(const float *samples,
                              size_t n,
                              uint32_t sample_rate_hz,
                              struct PcFeatures **out_handle);

// # Safety
// `handle` must come from `pc_features_new` and not be used afterwards.
void pc_features_free(struct PcFeatures *handle);

// # Safety
// `feats` must be a live handle; `rows` and `cols` writable.
enum PcStatus pc_features_shape(const struct PcFeatures *feats, size_t *rows, size_t *cols);

// Copies the matrix row-major.
//
// # Safety
// `out_values` must hold `len` writable doubles.
enum PcStatus pc_features_copy(const struct PcFeatures *feats, double *out_values, size_t len);

// Flattened context window centred on `center_frame`, zero-padded at the
// utterance edges. This is the CNN model input row.
//
// # Safety
// `out_values` must hold `len` writable doubles.
enum PcStatus pc_features_context_window(const struct PcFeatures *feats,
                                         size_t center_frame,
                                         double *out_values,
                                         size_t len);

// # Safety
// `checkpoint_path` must be a NUL-terminated string.
enum PcStatus pc_model_load(const char *checkpoint_path, struct PcModel **out_handle);

// # Safety
// `handle` must come from `pc_model_load` and not be used afterwards.
void pc_model_free(struct PcModel *handle);

// Values per input row: a flattened feature context or a waveform window.
//
// # Safety
// `model` must be a live handle and `out_len` writable.
enum PcStatus pc_model_input_len(const struct PcModel *model, size_t *out_len);

// Arg-max class per row.
//
// # Safety
// `inputs` must hold `n_rows · row_len` doubles and `out_labels` `n_rows`.
enum PcStatus pc_model_predict(const struct PcModel *model,
                               const double *inputs,
                               size_t n_rows,
                               size_t row_len,
                               size_t *out_labels);

// Raw class scores, row-major `n_rows × num_classes`.
//
// # Safety
// `inputs` must hold `n_rows · row_len` doubles and `out_logits` `len`.
enum PcStatus pc_model_logits(const struct PcModel *model,
                              const double *inputs,
                              size_t n_rows,
                              size_t row_len,
                              double *out_logits,
                              size_t len);

// Runs every stage of the experiment in `config_path` under `out_dir`.
//
// # Safety
// Both paths must be NUL-terminated strings.
enum PcStatus pc_run_experiment(const char *config_path, const char *out_dir, bool force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHONECLS_H */
