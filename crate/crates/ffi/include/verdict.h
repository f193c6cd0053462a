/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VERDICT_H
#define VERDICT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of a fallible call. Anything but `Ok` leaves a message in
// `verdict_last_error`.
typedef enum VerdictStatus {
  VERDICT_STATUS_OK = 0,
  VERDICT_STATUS_NULL_POINTER = 1,
  VERDICT_STATUS_INVALID_UTF8 = 2,
  VERDICT_STATUS_INVALID_ARGUMENT = 3,
  // No answer could be extracted.
  VERDICT_STATUS_NO_ANSWER = 4,
  VERDICT_STATUS_CONSENSUS = 5,
  VERDICT_STATUS_CONFIG = 6,
  VERDICT_STATUS_IO = 7,
  VERDICT_STATUS_RUN = 8,
  VERDICT_STATUS_PANIC = 255,
} VerdictStatus;

// Values accepted by `verdict_consensus_select`.
typedef enum VerdictStrategy {
  VERDICT_STRATEGY_CROSS_ALL = 0,
  VERDICT_STRATEGY_BEST_REFERENCE = 1,
  VERDICT_STRATEGY_DIVERGENT = 2,
} VerdictStrategy;

// Values accepted by `verdict_extract_answer`.
typedef enum VerdictAnswerFormat {
  VERDICT_ANSWER_FORMAT_BOXED = 0,
  VERDICT_ANSWER_FORMAT_TAGGED = 1,
  VERDICT_ANSWER_FORMAT_LETTER = 2,
} VerdictAnswerFormat;

// Relative-consensus matrix of one sample.
typedef struct VerdictConsensus VerdictConsensus;

// An in-process scripted endpoint server.
typedef struct VerdictMock VerdictMock;

// A loaded run configuration.
typedef struct VerdictRunner VerdictRunner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *verdict_last_error(void);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void verdict_string_free(char *s);

// Build the consensus matrix for `k` models.
//
// `nll` is `k * k` row-major: `nll[j * k + i]` is the mean answer NLL of
// candidate `i` under scorer `j`. `valid[i]` is nonzero when model `i`
// produced an answer; entries touching invalid candidates are ignored.
//
// # Safety
// `nll` must point to `k * k` doubles and `valid` to `k` bytes.
enum VerdictStatus verdict_consensus_new(size_t k,
                                         const double *nll,
                                         const uint8_t *valid,
                                         struct VerdictConsensus **out);

// Number of models in the matrix, 0 for NULL.
//
// # Safety
// `c` must be NULL or a live handle.
size_t verdict_consensus_k(const struct VerdictConsensus *c);

// Copy the `k * k` row-major relative scores (`[j * k + i]` = scorer j on
// candidate i) into `out`. Invalid candidates read as +infinity.
//
// # Safety
// `out` must have room for `k * k` doubles.
enum VerdictStatus verdict_consensus_relative(const struct VerdictConsensus *c, double *out);

// Copy the `k` global consensus scores into `out`; lower means more agreed upon.
//
// # Safety
// `out` must have room for `k` doubles.
enum VerdictStatus verdict_consensus_global_scores(const struct VerdictConsensus *c, double *out);

// Select up to `m` experts. `strategy` is a `VerdictStrategy` value;
// `reference` is the fixed model for best-reference, or -1.
// Writes the chosen indices to `chosen` (room for `m`) and their count to `len`.
//
// # Safety
// `chosen` must have room for `m` entries.
enum VerdictStatus verdict_consensus_select(const struct VerdictConsensus *c,
                                            uint32_t strategy,
                                            size_t m,
                                            int64_t reference,
                                            size_t *chosen,
                                            size_t *len);

// # Safety
// `c` must be NULL or a handle from `verdict_consensus_new`, freed once.
void verdict_consensus_free(struct VerdictConsensus *c);

// Extract the marked final answer from model output. Returns `NoAnswer`
// when there is none.
//
// # Safety
// `text` must be a NUL-terminated string; `out` receives a string to free.
enum VerdictStatus verdict_extract_answer(const char *text, uint32_t format, char **out);

// Normalized comparison form of an answer.
//
// # Safety
// `text` must be a NUL-terminated string; `out` receives a string to free.
enum VerdictStatus verdict_normalize_answer(const char *text, char **out);

// Character-level edit distance.
//
// # Safety
// `a` and `b` must be NUL-terminated strings.
enum VerdictStatus verdict_levenshtein(const char *a, const char *b, size_t *out);

// ANLS of `pred` against `n_golds` gold answers.
//
// # Safety
// `golds` must point to `n_golds` NUL-terminated strings.
enum VerdictStatus verdict_anls(const char *pred,
                                const char *const *golds,
                                size_t n_golds,
                                double threshold,
                                double *out);

// Numeric match within a relative tolerance, exact match otherwise.
//
// # Safety
// `pred` and `gold` must be NUL-terminated strings.
enum VerdictStatus verdict_relaxed_accuracy(const char *pred,
                                            const char *gold,
                                            double rel_tol,
                                            bool *out);

// Option-letter match.
//
// # Safety
// `pred` and `gold` must be NUL-terminated strings.
enum VerdictStatus verdict_letter_match(const char *pred, const char *gold, bool *out);

// USD cost of one call, rounded to six decimals.
double verdict_estimate_cost(uint64_t input_tokens,
                             uint64_t output_tokens,
                             double usd_per_million_input,
                             double usd_per_million_output);

// Load and validate a TOML run configuration.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum VerdictStatus verdict_runner_new(const char *config_path, struct VerdictRunner **out);

// Point every model of the configuration at `base_url`.
//
// # Safety
// `r` must be a live runner; `base_url` a NUL-terminated string.
enum VerdictStatus verdict_runner_set_base_url(struct VerdictRunner *r, const char *base_url);

// Run every unfinished sample of `manifest_path` into `out_dir` and return
// the run summary as JSON. With `resume` set, samples already recorded in
// `out_dir` are skipped; otherwise the directory must be fresh.
//
// # Safety
// `r` must be a live runner; paths NUL-terminated; `summary_json` receives a string to free.
enum VerdictStatus verdict_runner_run(const struct VerdictRunner *r,
                                      const char *manifest_path,
                                      const char *out_dir,
                                      bool resume,
                                      char **summary_json);

// # Safety
// `r` must be NULL or a handle from `verdict_runner_new`, freed once.
void verdict_runner_free(struct VerdictRunner *r);

// Serve a JSON scenario on 127.0.0.1:`port` (0 picks a free port).
//
// # Safety
// `scenario_path` must be a NUL-terminated string.
enum VerdictStatus verdict_mock_start(const char *scenario_path,
                                      uint16_t port,
                                      struct VerdictMock **out);

// Bound port, 0 for NULL.
//
// # Safety
// `m` must be NULL or a live mock handle.
uint16_t verdict_mock_port(const struct VerdictMock *m);

// Requests received so far, failures and unmatched ones included.
//
// # Safety
// `m` must be NULL or a live mock handle.
uint64_t verdict_mock_request_count(const struct VerdictMock *m);

// Stop the server and release the handle.
//
// # Safety
// `m` must be NULL or a handle from `verdict_mock_start`, stopped once.
void verdict_mock_stop(struct VerdictMock *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VERDICT_H */
