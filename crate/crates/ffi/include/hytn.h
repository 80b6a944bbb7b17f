#ifndef HYTN_H
#define HYTN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HytnStatus {
  HYTN_STATUS_OK = 0,
  HYTN_STATUS_NULL_POINTER = 1,
  HYTN_STATUS_INVALID_UTF8 = 2,
  HYTN_STATUS_IO = 3,
  HYTN_STATUS_CONFIG = 4,
  HYTN_STATUS_MODEL = 5,
  HYTN_STATUS_UNKNOWN_LABEL = 6,
  HYTN_STATUS_RENDER = 7,
  HYTN_STATUS_INVALID = 8,
  HYTN_STATUS_PANIC = 9,
} HytnStatus;

/**
 * Opaque normalizer handle.
 */
typedef struct HytnNormalizer HytnNormalizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a rules-only normalizer with the built-in registry, rules and
 * priority list.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
enum HytnStatus hytn_normalizer_new(struct HytnNormalizer **out);

/**
 * Creates a hybrid normalizer with the built-in rules and the classifier
 * checkpoint at `model_path`.
 *
 * # Safety
 * `model_path` must be a nul-terminated string; `out` as for
 * [`hytn_normalizer_new`].
 */
enum HytnStatus hytn_normalizer_load(const char *model_path, struct HytnNormalizer **out);

/**
 * Releases a normalizer. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not be used afterwards.
 */
void hytn_normalizer_free(struct HytnNormalizer *handle);

/**
 * Normalizes `text`. With `rules_only` nonzero the classifier is skipped.
 * The result goes to `*out` and must be released with [`hytn_string_free`].
 *
 * # Safety
 * `handle` must be a live normalizer, `text` a nul-terminated string and
 * `out` writable.
 */
enum HytnStatus hytn_normalize(const struct HytnNormalizer *handle,
                               const char *text,
                               int32_t rules_only,
                               char **out);

/**
 * Renders one NSW `surface` with the built-in label `label`, e.g.
 * `("10:30", "B_Time")`.
 *
 * # Safety
 * `surface` and `label` must be nul-terminated strings; `out` writable.
 */
enum HytnStatus hytn_render(const char *surface, const char *label, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void hytn_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *hytn_last_error(void);

/**
 * Static description of a status code; takes a plain integer so any value
 * is safe to pass.
 */
const char *hytn_status_str(int32_t status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYTN_H */
