#ifndef EVIRE_H
#define EVIRE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum EvireStatus {
  EVIRE_STATUS_OK = 0,
  EVIRE_STATUS_NULL_ARGUMENT = 1,
  EVIRE_STATUS_INVALID_UTF8 = 2,
  EVIRE_STATUS_IO = 3,
  EVIRE_STATUS_PARSE = 4,
  EVIRE_STATUS_CONSISTENCY = 5,
  EVIRE_STATUS_CONFIG = 6,
  EVIRE_STATUS_OUT_OF_RANGE = 7,
  EVIRE_STATUS_PANIC = 8,
} EvireStatus;

/**
 * Parsed documents.
 */
typedef struct EvireCorpus EvireCorpus;

/**
 * Trained encoder and classifier with their vocabulary and schema.
 */
typedef struct EvireModel EvireModel;

/**
 * Output of [`evire_predict`].
 */
typedef struct EvirePredictions EvirePredictions;

/**
 * One extracted triple. Entity indices refer to the document's entity list;
 * `relation` is the schema id (1-based, 0 is the threshold class).
 */
typedef struct EvireTriple {
  size_t doc_index;
  size_t head;
  size_t tail;
  size_t relation;
  double score;
  size_t evidence_len;
} EvireTriple;

/**
 * Micro precision, recall and F1 for relations and evidence.
 */
typedef struct EvireScores {
  double re_precision;
  double re_recall;
  double re_f1;
  double evi_precision;
  double evi_recall;
  double evi_f1;
} EvireScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Owned by the
 * library; valid until the next failing call on this thread.
 */
const char *evire_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *evire_version(void);

/**
 * Loads a checkpoint written by the `evire` tool.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is a valid pointer.
 */
enum EvireStatus evire_model_load(const char *path, struct EvireModel **out);

/**
 * # Safety
 * `model` is NULL or a handle from [`evire_model_load`] not yet freed.
 */
void evire_model_free(struct EvireModel *model);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `model` is a live handle; `out` is a valid pointer.
 */
enum EvireStatus evire_model_parameter_count(const struct EvireModel *model, size_t *out);

/**
 * Number of relations in the model schema, excluding the threshold class.
 *
 * # Safety
 * `model` is a live handle; `out` is a valid pointer.
 */
enum EvireStatus evire_model_num_relations(const struct EvireModel *model, size_t *out);

/**
 * Loads a DocRED-style JSON corpus using the relation schema of `model`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `model` is a live handle; `out` is a
 * valid pointer.
 */
enum EvireStatus evire_corpus_load(const char *path,
                                   const struct EvireModel *model,
                                   struct EvireCorpus **out);

/**
 * # Safety
 * `corpus` is NULL or a handle from [`evire_corpus_load`] not yet freed.
 */
void evire_corpus_free(struct EvireCorpus *corpus);

/**
 * Number of documents, or 0 for NULL.
 *
 * # Safety
 * `corpus` is NULL or a live handle.
 */
size_t evire_corpus_len(const struct EvireCorpus *corpus);

/**
 * Extracts relations and evidence for every document of `corpus`.
 *
 * # Safety
 * `model` and `corpus` are live handles; `out` is a valid pointer.
 */
enum EvireStatus evire_predict(const struct EvireModel *model,
                               const struct EvireCorpus *corpus,
                               double evi_threshold,
                               struct EvirePredictions **out);

/**
 * # Safety
 * `preds` is NULL or a handle from [`evire_predict`] not yet freed.
 */
void evire_predictions_free(struct EvirePredictions *preds);

/**
 * Number of triples, or 0 for NULL.
 *
 * # Safety
 * `preds` is NULL or a live handle.
 */
size_t evire_predictions_len(const struct EvirePredictions *preds);

/**
 * Copies triple `i`. `doc_index` is the position of its document in
 * `corpus`.
 *
 * # Safety
 * `preds` and `corpus` are live handles; `out` is a valid pointer.
 */
enum EvireStatus evire_predictions_get(const struct EvirePredictions *preds,
                                       const struct EvireCorpus *corpus,
                                       size_t i,
                                       struct EvireTriple *out);

/**
 * Copies up to `cap` evidence sentence indices of triple `i` into `buf` and
 * stores the full count in `len`.
 *
 * # Safety
 * `preds` is a live handle; `buf` points to `cap` writable elements (may be
 * NULL when `cap` is 0); `len` is a valid pointer.
 */
enum EvireStatus evire_predictions_evidence(const struct EvirePredictions *preds,
                                            size_t i,
                                            size_t *buf,
                                            size_t cap,
                                            size_t *len);

/**
 * Serializes predictions as a JSON array; free the string with
 * [`evire_string_free`].
 *
 * # Safety
 * `preds` and `model` are live handles; `out` is a valid pointer.
 */
enum EvireStatus evire_predictions_to_json(const struct EvirePredictions *preds,
                                           const struct EvireModel *model,
                                           char **out);

/**
 * # Safety
 * `s` is NULL or a string returned by this library and not yet freed.
 */
void evire_string_free(char *s);

/**
 * Scores `preds` against the gold annotations of `gold`.
 *
 * # Safety
 * `preds` and `gold` are live handles; `out` is a valid pointer.
 */
enum EvireStatus evire_evaluate(const struct EvirePredictions *preds,
                                const struct EvireCorpus *gold,
                                struct EvireScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVIRE_H */
