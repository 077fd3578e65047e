/* C interface to the fugato note-sequence model. */

#ifndef FUGATO_H
#define FUGATO_H

#pragma once

/* Generated by cbindgen from fugato-ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fugato call. Zero means success; any other value is an
 * error whose message is available from `fugato_last_error`.
 */
typedef enum FugatoStatus {
  /**
   * The call succeeded.
   */
  FUGATO_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FUGATO_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument value was rejected (bad sampling parameters, …).
   */
  FUGATO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A string argument was not valid UTF-8.
   */
  FUGATO_STATUS_INVALID_UTF8 = 3,
  /**
   * A file could not be read or written.
   */
  FUGATO_STATUS_IO = 4,
  /**
   * Input bytes were malformed (not a checkpoint, not a MIDI file, …).
   */
  FUGATO_STATUS_BAD_DATA = 5,
  /**
   * The library panicked; this is a bug in fugato.
   */
  FUGATO_STATUS_PANIC = 6,
} FugatoStatus;

/**
 * Opaque handle to a loaded model checkpoint.
 */
typedef struct FugatoModel FugatoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never null; do not
 * free.
 */
const char *fugato_version(void);

/**
 * Message of the most recent failure on the calling thread, as a
 * NUL-terminated string. Valid until the next failing call on this
 * thread; do not free. Returns an empty string if nothing failed yet.
 */
const char *fugato_last_error(void);

/**
 * Load a model checkpoint from a file written by `fugato train` (or the
 * core library). On success stores a new handle in `*out`.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * memory for one pointer.
 */
enum FugatoStatus fugato_model_load(const char *path, struct FugatoModel **out);

/**
 * Load a model checkpoint from an in-memory buffer. On success stores a
 * new handle in `*out`.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` to writable memory
 * for one pointer.
 */
enum FugatoStatus fugato_model_from_bytes(const uint8_t *data,
                                          size_t len,
                                          struct FugatoModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be a handle from a fugato load function, not yet freed.
 */
void fugato_model_free(struct FugatoModel *model);

/**
 * Number of completed training epochs recorded in the checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FugatoStatus fugato_model_epoch(const struct FugatoModel *model, uint64_t *out);

/**
 * Sample a score of `length` notes with constrained top-`top_m` sampling
 * seeded by `seed`, and return it as Standard MIDI File bytes. On success
 * `*out_data`/`*out_len` describe a buffer owned by the library; release
 * it with `fugato_buffer_free`.
 *
 * # Safety
 * `model` must be a live handle; `out_data` and `out_len` must be
 * writable.
 */
enum FugatoStatus fugato_generate_midi(const struct FugatoModel *model,
                                       uint64_t seed,
                                       size_t length,
                                       size_t top_m,
                                       uint8_t **out_data,
                                       size_t *out_len);

/**
 * Release a buffer returned by this library. `len` must be the length the
 * library reported. Null is ignored.
 *
 * # Safety
 * `(data, len)` must come from a fugato call, not yet freed.
 */
void fugato_buffer_free(uint8_t *data, size_t len);

/**
 * Parse MIDI bytes and normalize them onto the default alphabets (22
 * timings, 21 durations, 88 pitches). On success stores a NUL-terminated
 * note-list text (one `timing duration pitch` index triple per line) in
 * `*out_text`; release it with `fugato_string_free`.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out_text` must be
 * writable.
 */
enum FugatoStatus fugato_normalize_midi(const uint8_t *data, size_t len, char **out_text);

/**
 * Read a MIDI file and normalize it like `fugato_normalize_midi`.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out_text` must be
 * writable.
 */
enum FugatoStatus fugato_normalize_file(const char *path, char **out_text);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `text` must come from a fugato call, not yet freed.
 */
void fugato_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUGATO_H */
