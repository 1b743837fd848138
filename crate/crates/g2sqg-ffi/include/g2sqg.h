/* C interface for the g2sqg question-generation library. */

#ifndef G2SQG_H
#define G2SQG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum G2sqgStatus {
  G2SQG_OK = 0,
  G2SQG_NULL_ARGUMENT = 1,
  G2SQG_INVALID_UTF8 = 2,
  G2SQG_IO_ERROR = 3,
  G2SQG_PARSE_ERROR = 4,
  G2SQG_CONFIG_ERROR = 5,
  G2SQG_RUNTIME_ERROR = 6,
} G2sqgStatus;

// Opaque handle to a loaded model plus its vocabulary and embeddings.
typedef struct G2sqgModel G2sqgModel;

// Per-sequence reward breakdown (mirrors the library's reward report).
typedef struct G2sqgReward {
  double bleu4;
  double rouge_l;
  double wmd;
  double f_sem;
  double total;
} G2sqgReward;

// Corpus-level metrics.
typedef struct G2sqgMetrics {
  double bleu4;
  double rouge_l;
  uint64_t n;
} G2sqgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *g2sqg_version(void);

// Message describing the most recent failure on this thread; valid
// until the next failing call. Do not free.
const char *g2sqg_last_error_message(void);

// Release a string returned through a `char **` out-parameter.
//
// # Safety
// `s` must be NULL or a pointer previously returned by this library.
void g2sqg_string_free(char *s);

// Load a model from a checkpoint plus its vocabulary and tag files.
// `config_path` and `contextual_path` may be NULL; the config defaults
// then apply (the checkpoint must have been trained with them).
//
// # Safety
// All path arguments must be NULL or valid NUL-terminated strings;
// `out_model` must be a valid pointer.
enum G2sqgStatus g2sqg_model_load(const char *checkpoint_path,
                                  const char *vocab_path,
                                  const char *tags_path,
                                  const char *config_path,
                                  const char *contextual_path,
                                  struct G2sqgModel **out_model);

// Release a model handle.
//
// # Safety
// `model` must be NULL or a pointer from [`g2sqg_model_load`], not yet
// freed.
void g2sqg_model_free(struct G2sqgModel *model);

// Generate a question for one example. `example_json` uses the dataset
// line format; the result is written as
// `{"id": ..., "question_tokens": [...]}`. A `beam_width` or `max_len`
// of 0 selects the loaded configuration's default.
//
// # Safety
// `model` must be a live handle; `example_json` a valid NUL-terminated
// string; `out_json` a valid pointer.
enum G2sqgStatus g2sqg_model_generate_json(const struct G2sqgModel *model,
                                           const char *example_json,
                                           unsigned int beam_width,
                                           unsigned int max_len,
                                           char **out_json);

// Reward of a candidate token sequence against a reference, using the
// model's fixed word vectors for the semantic term. Token sequences are
// JSON string arrays.
//
// # Safety
// `model` must be a live handle; the JSON arguments valid NUL-terminated
// strings; `out_reward` a valid pointer.
enum G2sqgStatus g2sqg_model_reward(const struct G2sqgModel *model,
                                    const char *candidate_json,
                                    const char *reference_json,
                                    double alpha,
                                    struct G2sqgReward *out_reward);

// Corpus BLEU-4 and mean ROUGE-L over aligned candidate/reference
// pairs, passed as a JSON array of `[candidate, reference]` token-array
// pairs. Needs no model handle.
//
// # Safety
// `pairs_json` must be a valid NUL-terminated string; `out_metrics` a
// valid pointer.
enum G2sqgStatus g2sqg_evaluate_pairs(const char *pairs_json, struct G2sqgMetrics *out_metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* G2SQG_H */
