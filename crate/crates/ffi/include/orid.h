#ifndef ORID_H
#define ORID_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Number of organs; arrays indexed by organ use the order lung, heart, bone, pleural, mediastinum.
 */
#define ORID_ORGAN_COUNT 5

/**
 * Result codes shared by every entry point.
 */
typedef enum OridStatus {
  ORID_STATUS_OK = 0,
  ORID_STATUS_NULL_POINTER = 1,
  ORID_STATUS_INVALID_UTF8 = 2,
  ORID_STATUS_IO = 3,
  ORID_STATUS_CHECKPOINT = 4,
  ORID_STATUS_INVALID_ARGUMENT = 5,
  ORID_STATUS_SHAPE = 6,
  ORID_STATUS_PARSE = 7,
  ORID_STATUS_PANIC = 8,
  ORID_STATUS_OTHER = 9,
} OridStatus;

/**
 * A disease-symptom graph.
 */
typedef struct OridDsGraphHandle OridDsGraphHandle;

/**
 * A loaded model.
 */
typedef struct OridModelHandle OridModelHandle;

/**
 * Corpus metrics; field order matches the printed metric table.
 */
typedef struct OridMetrics {
  double bleu1;
  double bleu2;
  double bleu3;
  double bleu4;
  double meteor;
  double rouge_l;
  double precision;
  double recall;
  double f1;
} OridMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *orid_last_error(void);

/**
 * Library version as a static string.
 */
const char *orid_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void orid_string_free(char *s);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OridStatus orid_model_load(const char *path, struct OridModelHandle **out);

/**
 * # Safety
 * `model` must come from [`orid_model_load`] and not be freed twice. Null is ignored.
 */
void orid_model_free(struct OridModelHandle *model);

/**
 * Vocabulary size, image side and channel count the model expects.
 *
 * # Safety
 * Pointers must be valid; any out-pointer may be null to skip it.
 */
enum OridStatus orid_model_info(const struct OridModelHandle *model,
                                size_t *vocab_size,
                                size_t *image_size,
                                size_t *image_channels);

/**
 * Mask channel count of an organ (index in canonical order), or 0 when out of range.
 */
size_t orid_organ_mask_channels(size_t organ);

/**
 * Generates a report for one image.
 *
 * `image` is `height * width * channels` floats in `[0, 1]`, row-major HxWxC.
 * `masks` holds five pointers (one per organ) to binary stacks of
 * `orid_organ_mask_channels(o) * mask_height * mask_width` bytes, CxHxW.
 * `descriptions` holds five NUL-terminated organ descriptions.
 * On success `*report` receives a string to release with [`orid_string_free`].
 * When `alpha` is non-null it receives five importance coefficients and
 * `*has_alpha` is set to whether the model computed them.
 *
 * # Safety
 * Buffers must be valid for the stated sizes.
 */
enum OridStatus orid_model_generate(const struct OridModelHandle *model,
                                    const float *image,
                                    size_t height,
                                    size_t width,
                                    size_t channels,
                                    const uint8_t *const *masks,
                                    size_t mask_height,
                                    size_t mask_width,
                                    const char *const *descriptions,
                                    size_t beam_width,
                                    char **report,
                                    double *alpha,
                                    bool *has_alpha);

/**
 * The bundled disease-symptom graph.
 *
 * # Safety
 * `out` must be writable.
 */
enum OridStatus orid_ds_graph_default(struct OridDsGraphHandle **out);

/**
 * Parses a disease-symptom graph file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum OridStatus orid_ds_graph_load(const char *path, struct OridDsGraphHandle **out);

/**
 * # Safety
 * `graph` must come from this library and not be freed twice. Null is ignored.
 */
void orid_ds_graph_free(struct OridDsGraphHandle *graph);

/**
 * Organs a normalized sentence refers to, as a bitmask (bit `i` = organ `i`).
 *
 * # Safety
 * `graph` and `sentence` must be valid; `organs` must be writable.
 */
enum OridStatus orid_ds_graph_assign(const struct OridDsGraphHandle *graph,
                                     const char *sentence,
                                     uint32_t *organs);

/**
 * Writes the 6x6 row-major adjacency (five organs, then the total node).
 *
 * # Safety
 * `out` must hold 36 doubles.
 */
enum OridStatus orid_ds_graph_adjacency(const struct OridDsGraphHandle *graph, double *out);

/**
 * Scores `n` generated reports against references.
 *
 * # Safety
 * `predictions` and `references` must each hold `n` NUL-terminated strings.
 */
enum OridStatus orid_score(const char *const *predictions,
                           const char *const *references,
                           size_t n,
                           struct OridMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORID_H */
