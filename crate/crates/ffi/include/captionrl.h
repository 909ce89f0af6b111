#ifndef CAPTIONRL_H
#define CAPTIONRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 5 match the command-line exit codes.
 */
typedef enum CrlStatus {
  CRL_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an out-of-range argument.
   */
  CRL_STATUS_INVALID_ARGUMENT = 1,
  CRL_STATUS_CONFIG = 2,
  CRL_STATUS_DATA = 3,
  CRL_STATUS_SCORER_UNAVAILABLE = 4,
  CRL_STATUS_NUMERIC = 5,
  /**
   * A panic was caught at the boundary.
   */
  CRL_STATUS_INTERNAL = 6,
} CrlStatus;

/**
 * A loaded caption corpus; also supplies document frequencies for CIDEr-D.
 */
typedef struct CrlCorpus CrlCorpus;

/**
 * A checkpoint: parameters plus vocabulary.
 */
typedef struct CrlModel CrlModel;

/**
 * An entailment scorer, lexical or remote.
 */
typedef struct CrlScorer CrlScorer;

/**
 * Reward for one candidate caption.
 */
typedef struct CrlReward {
  double value;
  double base_value;
  double entailment;
  /**
   * 1 when the penalty was applied, else 0.
   */
  int32_t penalized;
} CrlReward;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *crl_last_error(void);

/**
 * Library version as a static string.
 */
const char *crl_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void crl_string_free(char *s);

/**
 * Loads a JSONL corpus.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CrlStatus crl_corpus_load(const char *path, struct CrlCorpus **out);

/**
 * # Safety
 * `corpus` must be null or a handle from [`crl_corpus_load`].
 */
void crl_corpus_free(struct CrlCorpus *corpus);

/**
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum CrlStatus crl_corpus_len(const struct CrlCorpus *corpus, size_t *out);

/**
 * Lexical scorer over a lexicon JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CrlStatus crl_scorer_lexical(const char *lexicon_path, struct CrlScorer **out);

/**
 * Remote scorer at `url`. No request is made until the first score.
 *
 * # Safety
 * `url` must be a NUL-terminated string; `out` must be writable.
 */
enum CrlStatus crl_scorer_remote(const char *url, double timeout_secs, struct CrlScorer **out);

/**
 * # Safety
 * `scorer` must be null or a handle from a `crl_scorer_*` constructor.
 */
void crl_scorer_free(struct CrlScorer *scorer);

/**
 * Probability that `hypothesis` follows from `premise`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum CrlStatus crl_entailment(const struct CrlScorer *scorer,
                              const char *premise,
                              const char *hypothesis,
                              double *out);

/**
 * BLEU-4 of `candidate` against `n_refs` references (raw scale).
 *
 * # Safety
 * `refs` must point to `n_refs` NUL-terminated strings.
 */
enum CrlStatus crl_bleu4(const char *candidate,
                         const char *const *refs,
                         size_t n_refs,
                         double *out);

/**
 * ROUGE-L F-measure (raw scale).
 *
 * # Safety
 * `refs` must point to `n_refs` NUL-terminated strings.
 */
enum CrlStatus crl_rouge_l(const char *candidate,
                           const char *const *refs,
                           size_t n_refs,
                           double *out);

/**
 * CIDEr-D (raw scale) with document frequencies from `corpus`.
 *
 * # Safety
 * `corpus` must be a live handle; `refs` must point to `n_refs` strings.
 */
enum CrlStatus crl_cider_d(const struct CrlCorpus *corpus,
                           const char *candidate,
                           const char *const *refs,
                           size_t n_refs,
                           double *out);

/**
 * CIDEr-D reward with the entailment penalty: `base - lambda` when the
 * best entailment over references is below `beta`, otherwise `base`.
 *
 * # Safety
 * Handles must be live; `refs` must point to `n_refs` strings; `out` writable.
 */
enum CrlStatus crl_cident(const struct CrlCorpus *corpus,
                          const struct CrlScorer *scorer,
                          const char *candidate,
                          const char *const *refs,
                          size_t n_refs,
                          double lambda,
                          double beta,
                          struct CrlReward *out);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CrlStatus crl_model_load(const char *path, struct CrlModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`crl_model_load`].
 */
void crl_model_free(struct CrlModel *model);

/**
 * Beam-decodes one clip. `features` holds `frames * dim` values, row-major.
 * With more than one model the per-step distributions are averaged. The
 * caption is written to `*out` and must be freed with [`crl_string_free`].
 *
 * # Safety
 * `models` must point to `n_models` live handles; `features` to
 * `frames * dim` doubles; `out` must be writable.
 */
enum CrlStatus crl_decode(const struct CrlModel *const *models,
                          size_t n_models,
                          const double *features,
                          size_t frames,
                          size_t dim,
                          size_t beam,
                          char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPTIONRL_H */
