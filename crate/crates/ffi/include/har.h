#ifndef HAR_H
#define HAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum HarStatus {
  HAR_STATUS_OK = 0,
  HAR_STATUS_NULL_POINTER = 1,
  HAR_STATUS_INVALID_ARGUMENT = 2,
  HAR_STATUS_PARSE = 3,
  HAR_STATUS_IO = 4,
  HAR_STATUS_MODEL = 5,
  HAR_STATUS_FROZEN = 6,
  HAR_STATUS_CONFIG = 7,
  HAR_STATUS_INTERNAL = 8,
} HarStatus;

// How per-position bi-LM layers are combined by [`har_bilm_embed`].
typedef enum HarElmoMode {
  HAR_ELMO_MODE_CONCAT = 0,
  HAR_ELMO_MODE_WEIGHTED_SUM = 1,
  HAR_ELMO_MODE_SUM = 2,
  HAR_ELMO_MODE_LAST = 3,
} HarElmoMode;

// A trained, frozen bidirectional language model.
typedef struct HarBiLm HarBiLm;

// Labeled, encoded activity sequences with their vocabulary.
typedef struct HarDataset HarDataset;

typedef struct HarVocabulary HarVocabulary;

typedef struct HarWord2Vec HarWord2Vec;

typedef struct HarBiLmOptions {
  size_t embedding_size;
  size_t hidden_size;
  size_t window;
  size_t max_epochs;
  size_t batch_size;
  size_t patience;
  double learning_rate;
  double validation_fraction;
  uint64_t seed;
} HarBiLmOptions;

typedef struct HarWord2VecOptions {
  size_t embedding_size;
  size_t window;
  size_t epochs;
  size_t negatives;
  double learning_rate;
  uint64_t seed;
} HarWord2VecOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version; static storage, do not free.
const char *har_version(void);

// Message of the last failed call on this thread, or null. Free with [`har_string_free`].
char *har_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void har_string_free(char *s);

// Builds a dataset from a CASAS-format log file. `relabel` is null, a built-in map
// name ("milan", "cairo") or a map file path.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum HarStatus har_dataset_from_log(const char *path,
                                    const char *relabel,
                                    size_t max_len,
                                    struct HarDataset **out_dataset);

// Like [`har_dataset_from_log`] with the log given as text.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum HarStatus har_dataset_from_log_text(const char *name,
                                         const char *text,
                                         const char *relabel,
                                         size_t max_len,
                                         struct HarDataset **out_dataset);

// # Safety
// `d` must be null or a live dataset handle.
void har_dataset_free(struct HarDataset *d);

// # Safety
// `d` must be a live dataset handle and `out_len` writable.
enum HarStatus har_dataset_len(const struct HarDataset *d, size_t *out_len);

// # Safety
// `d` must be a live dataset handle and `out_count` writable.
enum HarStatus har_dataset_class_count(const struct HarDataset *d, size_t *out_count);

// Class name `class_id`; free the result with [`har_string_free`].
//
// # Safety
// `d` must be a live dataset handle and `out_name` writable.
enum HarStatus har_dataset_class_name(const struct HarDataset *d, size_t class_id, char **out_name);

// Class id of sequence `index`.
//
// # Safety
// `d` must be a live dataset handle and `out_label` writable.
enum HarStatus har_dataset_label(const struct HarDataset *d, size_t index, size_t *out_label);

// Copy of the dataset's vocabulary.
//
// # Safety
// `d` must be a live dataset handle and `out_vocab` writable.
enum HarStatus har_dataset_vocabulary(const struct HarDataset *d, struct HarVocabulary **out_vocab);

// # Safety
// `v` must be null or a live vocabulary handle.
void har_vocabulary_free(struct HarVocabulary *v);

// Number of rows, padding and unknown included.
//
// # Safety
// `v` must be a live vocabulary handle and `out_size` writable.
enum HarStatus har_vocabulary_size(const struct HarVocabulary *v, size_t *out_size);

// Index of `token`, or the unknown index when absent.
//
// # Safety
// `v` must be a live vocabulary handle, `token` NUL-terminated, `out_index` writable.
enum HarStatus har_vocabulary_index(const struct HarVocabulary *v,
                                    const char *token,
                                    uint32_t *out_index);

// Token text of a real index; free the result with [`har_string_free`].
//
// # Safety
// `v` must be a live vocabulary handle and `out_token` writable.
enum HarStatus har_vocabulary_token(const struct HarVocabulary *v,
                                    uint32_t index,
                                    char **out_token);

// Encodes `n_tokens` tokens into `max_len` left-padded indexes and a 0/1 mask.
//
// # Safety
// `tokens` must hold `n_tokens` NUL-terminated strings; `out_indexes` and `out_mask`
// must each have room for `max_len` elements.
enum HarStatus har_vocabulary_encode(const struct HarVocabulary *v,
                                     const char *const *tokens,
                                     size_t n_tokens,
                                     size_t max_len,
                                     uint32_t *out_indexes,
                                     uint8_t *out_mask);

// Default bi-LM options.
//
// # Safety
// `out_options` must be writable.
enum HarStatus har_bilm_default_options(struct HarBiLmOptions *out_options);

// Trains a bi-LM on the dataset's sequences; the result is frozen. `options` may be null
// for the defaults.
//
// # Safety
// `d` must be a live dataset handle, `options` null or valid, `out_model` writable.
enum HarStatus har_bilm_train(const struct HarDataset *d,
                              const struct HarBiLmOptions *options,
                              struct HarBiLm **out_model);

// # Safety
// `path` must be NUL-terminated and `out_model` writable.
enum HarStatus har_bilm_load(const char *path, struct HarBiLm **out_model);

// # Safety
// `m` must be a live model handle and `path` NUL-terminated.
enum HarStatus har_bilm_save(const struct HarBiLm *m, const char *path);

// # Safety
// `m` must be null or a live model handle.
void har_bilm_free(struct HarBiLm *m);

// Per-direction hidden width `H`.
//
// # Safety
// `m` must be a live model handle and `out_hidden` writable.
enum HarStatus har_bilm_hidden_size(const struct HarBiLm *m, size_t *out_hidden);

// Perplexity of the model over the dataset's sequences, averaged over both directions.
//
// # Safety
// Handles must be live and `out_perplexity` writable.
enum HarStatus har_bilm_perplexity(const struct HarBiLm *m,
                                   const struct HarDataset *d,
                                   double *out_perplexity);

// Contextual representations of an unpadded index sequence, row-major `len × width`
// where width is `6H` for concat and `2H` otherwise. Writes the width to `out_width`;
// `out` must have room for `len * width` values.
//
// # Safety
// `m` must be a live model handle; `indexes` holds `len` values; `out` has `capacity` slots.
enum HarStatus har_bilm_embed(const struct HarBiLm *m,
                              const uint32_t *indexes,
                              size_t len,
                              enum HarElmoMode mode,
                              double *out_values,
                              size_t capacity,
                              size_t *out_width);

// Trains skip-gram embeddings; `options` may be null for the defaults.
//
// # Safety
// `d` must be a live dataset handle, `options` null or valid, `out_model` writable.
enum HarStatus har_word2vec_train(const struct HarDataset *d,
                                  const struct HarWord2VecOptions *options,
                                  struct HarWord2Vec **out_model);

// # Safety
// `path` must be NUL-terminated and `out_model` writable.
enum HarStatus har_word2vec_load(const char *path, struct HarWord2Vec **out_model);

// # Safety
// `w` must be a live model handle and `path` NUL-terminated.
enum HarStatus har_word2vec_save(const struct HarWord2Vec *w, const char *path);

// Writes `token,frequency,dim_0,...` rows for every real token.
//
// # Safety
// `w` must be a live model handle and `path` NUL-terminated.
enum HarStatus har_word2vec_export_csv(const struct HarWord2Vec *w, const char *path);

// # Safety
// `w` must be null or a live model handle.
void har_word2vec_free(struct HarWord2Vec *w);

// # Safety
// `w` must be a live model handle and `out_dim` writable.
enum HarStatus har_word2vec_dim(const struct HarWord2Vec *w, size_t *out_dim);

// Copies embedding row `index` into `out_values`, which must hold the model's dimension.
//
// # Safety
// `w` must be a live model handle; `out_values` has `capacity` slots.
enum HarStatus har_word2vec_row(const struct HarWord2Vec *w,
                                uint32_t index,
                                double *out_values,
                                size_t capacity);

// Cosine similarity of two token embeddings.
//
// # Safety
// `w` must be a live model handle; tokens NUL-terminated; `out_similarity` writable.
enum HarStatus har_word2vec_cosine(const struct HarWord2Vec *w,
                                   const char *a,
                                   const char *b,
                                   double *out_similarity);

// Runs the K-fold experiment described by `config_json` (an experiment configuration as
// JSON; null or `{}` for defaults) and returns the report as JSON. Free the report with
// [`har_string_free`].
//
// # Safety
// `d` must be a live dataset handle, `config_json` null or NUL-terminated, `out_report`
// writable.
enum HarStatus har_experiment_run(const struct HarDataset *d,
                                  const char *config_json,
                                  char **out_report);

// Writes a synthetic home log to `path` and its ground truth to `<path>.truth.json`.
// `days` of 0 keeps the scenario's default; `seed` may be null.
//
// # Safety
// Strings must be NUL-terminated; `seed` null or readable.
enum HarStatus har_synth_generate(const char *scenario_name,
                                  size_t days,
                                  const uint64_t *seed,
                                  const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAR_H */
