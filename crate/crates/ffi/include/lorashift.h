#ifndef LORASHIFT_H
#define LORASHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_INPUT = 2,
  LS_STATUS_DIMENSION = 3,
  LS_STATUS_DEGENERATE = 4,
  LS_STATUS_CONFIG = 5,
  LS_STATUS_SITE = 6,
  LS_STATUS_STALE = 7,
  LS_STATUS_INSUFFICIENT_DATA = 8,
  LS_STATUS_NON_FINITE = 9,
  LS_STATUS_PARSE = 10,
  LS_STATUS_IO = 11,
  LS_STATUS_PANIC = 99,
} LsStatus;

/**
 * Activation selector for [`LsModelConfig`].
 */
typedef enum LsActivation {
  LS_ACTIVATION_GELU_TANH = 0,
  LS_ACTIVATION_TANH = 1,
  LS_ACTIVATION_IDENTITY = 2,
} LsActivation;

/**
 * Normalisation selector for [`LsModelConfig`].
 */
typedef enum LsNorm {
  LS_NORM_RMS_NORM = 0,
  LS_NORM_IDENTITY = 1,
} LsNorm;

/**
 * Adapter location within a layer. Callers must pass one of the declared
 * values; the same holds for the other enums.
 */
typedef enum LsSlot {
  LS_SLOT_ATTN_OUT = 0,
  LS_SLOT_MLP_DOWN = 1,
} LsSlot;

/**
 * Opaque adapter-set handle.
 */
typedef struct LsLoraSet LsLoraSet;

/**
 * Opaque model handle.
 */
typedef struct LsModel LsModel;

typedef struct LsModelConfig {
  size_t n_layers;
  size_t d_model;
  size_t d_ff;
  size_t vocab;
  size_t seq_capacity;
  enum LsActivation activation;
  enum LsNorm norm;
  double init_scale;
  uint64_t seed;
} LsModelConfig;

typedef struct LsShiftSummary {
  double epsilon;
  double exact_shift;
  double first_order_total;
  double remainder;
  double delta_norm;
} LsShiftSummary;

typedef struct LsMarginSummary {
  double m0;
  double m;
  double first_order_margin;
  double margin_remainder;
  bool flip_predicted;
  bool flip_actual;
  /**
   * The flip inequality agrees with the sign of `m`.
   */
  bool identity_consistent;
} LsMarginSummary;

typedef struct LsSweepSummary {
  /**
   * Valid only when `has_slope` is true.
   */
  double fitted_slope;
  bool has_slope;
  bool linear_exact;
  /**
   * `remainder / eps` strictly decreases over the last three grid points.
   */
  bool tail_decreasing;
} LsSweepSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Fills `out` with the reference configuration.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `LsModelConfig`.
 */
enum LsStatus ls_model_config_reference(struct LsModelConfig *out);

/**
 * Builds a seeded model.
 *
 * # Safety
 * `config` must be null or valid; `out` must be null or writable.
 */
enum LsStatus ls_model_build(const struct LsModelConfig *config, struct LsModel **out);

/**
 * Loads a model file written by `ls_model_save` or the command-line tool.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` must be null or writable.
 */
enum LsStatus ls_model_load(const char *path_, struct LsModel **out);

/**
 * # Safety
 * `model` must be null or a live handle; `path_` must be null or NUL-terminated.
 */
enum LsStatus ls_model_save(const struct LsModel *model, const char *path_);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ls_model_free(struct LsModel *model);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ls_model_vocab(const struct LsModel *model);

/**
 * Writes the 32-byte SHA-256 digest of the model weights to `out`.
 *
 * # Safety
 * `model` must be null or live; `out` must be null or hold 32 bytes.
 */
enum LsStatus ls_model_digest(const struct LsModel *model, uint8_t *out);

/**
 * Final-position logits for `tokens`; `out` must hold `out_len == vocab`
 * values.
 *
 * # Safety
 * Pointers must be null or valid for the given lengths.
 */
enum LsStatus ls_forward_logits(const struct LsModel *model,
                                const size_t *tokens,
                                size_t n_tokens,
                                double *out,
                                size_t out_len);

/**
 * Creates an empty adapter set with global scale `epsilon`.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum LsStatus ls_lora_set_new(double epsilon, struct LsLoraSet **out);

/**
 * Loads an adapter file.
 *
 * # Safety
 * `path_` must be null or NUL-terminated; `out` must be null or writable.
 */
enum LsStatus ls_lora_set_load(const char *path_, struct LsLoraSet **out);

/**
 * # Safety
 * `set` must be null or live; `path_` must be null or NUL-terminated.
 */
enum LsStatus ls_lora_set_save(const struct LsLoraSet *set, const char *path_);

/**
 * Releases an adapter set. Null is ignored.
 *
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void ls_lora_set_free(struct LsLoraSet *set);

/**
 * # Safety
 * `set` must be null or live.
 */
enum LsStatus ls_lora_set_set_epsilon(struct LsLoraSet *set, double epsilon);

/**
 * Number of adapters in the set, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or live.
 */
size_t ls_lora_set_len(const struct LsLoraSet *set);

/**
 * Adds a Gaussian adapter drawn from `seed` (entries `scale * N(0, 1)`,
 * `B` first) at the given site of `model`.
 *
 * # Safety
 * `set` and `model` must be null or live.
 */
enum LsStatus ls_lora_set_add_random(struct LsLoraSet *set,
                                     const struct LsModel *model,
                                     size_t layer,
                                     enum LsSlot slot,
                                     size_t rank,
                                     double alpha,
                                     uint64_t seed,
                                     double scale);

/**
 * Adds an adapter from row-major `b` (`d_out x rank`) and `a`
 * (`rank x d_in`), with shapes taken from the site of `model`.
 *
 * # Safety
 * `set` and `model` must be null or live; `b` and `a` must be null or hold
 * the stated number of values.
 */
enum LsStatus ls_lora_set_add(struct LsLoraSet *set,
                              const struct LsModel *model,
                              size_t layer,
                              enum LsSlot slot,
                              size_t rank,
                              double alpha,
                              const double *b,
                              const double *a);

/**
 * Exact logit shift of token `y`, its first-order prediction and the
 * remainder.
 *
 * # Safety
 * Handles must be null or live; `tokens` must hold `n_tokens` values;
 * `out` must be null or writable.
 */
enum LsStatus ls_logit_remainder(const struct LsModel *model,
                                 const struct LsLoraSet *set,
                                 const size_t *tokens,
                                 size_t n_tokens,
                                 size_t y,
                                 struct LsShiftSummary *out);

/**
 * First-order logit shift of token `y` from the set's adapter at one site
 * (including the set's epsilon).
 *
 * # Safety
 * As for [`ls_logit_remainder`]; `out` must be null or writable.
 */
enum LsStatus ls_site_first_order(const struct LsModel *model,
                                  const struct LsLoraSet *set,
                                  const size_t *tokens,
                                  size_t n_tokens,
                                  size_t layer,
                                  enum LsSlot slot,
                                  size_t y,
                                  double *out);

/**
 * Margin `logit(y_doc) - logit(y_pre)` before and after the adapters, with
 * its first-order prediction and flip diagnostics.
 *
 * # Safety
 * As for [`ls_logit_remainder`].
 */
enum LsStatus ls_margin(const struct LsModel *model,
                        const struct LsLoraSet *set,
                        const size_t *tokens,
                        size_t n_tokens,
                        size_t y_doc,
                        size_t y_pre,
                        struct LsMarginSummary *out);

/**
 * Remainder sweep over a strictly decreasing positive `grid`. If
 * `remainders` is non-null it receives one remainder per grid point.
 *
 * # Safety
 * As for [`ls_logit_remainder`]; `grid` must hold `n_grid` values and
 * `remainders` must be null or hold `n_grid` values.
 */
enum LsStatus ls_remainder_sweep(const struct LsModel *model,
                                 const struct LsLoraSet *set,
                                 const size_t *tokens,
                                 size_t n_tokens,
                                 size_t y,
                                 const double *grid,
                                 size_t n_grid,
                                 struct LsSweepSummary *out,
                                 double *remainders);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORASHIFT_H */
