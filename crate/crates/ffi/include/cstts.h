#ifndef CSTTS_H
#define CSTTS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CsttsStatus {
  CSTTS_STATUS_OK = 0,
  CSTTS_STATUS_NULL_POINTER,
  CSTTS_STATUS_INVALID_UTF8,
  /**
   * The caller's buffer is too small; the required length was written.
   */
  CSTTS_STATUS_BUFFER_TOO_SMALL,
  CSTTS_STATUS_EMPTY_INPUT,
  CSTTS_STATUS_FORMAT,
  CSTTS_STATUS_TYPE,
  CSTTS_STATUS_INSUFFICIENT_DATA,
  CSTTS_STATUS_VALIDATION,
  CSTTS_STATUS_LOOKUP,
  CSTTS_STATUS_CONFIG,
  CSTTS_STATUS_DATA,
  CSTTS_STATUS_ARGUMENT,
  CSTTS_STATUS_NUMERIC,
  CSTTS_STATUS_CHECKPOINT,
  CSTTS_STATUS_SUBPROCESS,
  CSTTS_STATUS_IO,
  /**
   * A Rust panic was caught at the boundary.
   */
  CSTTS_STATUS_PANIC,
} CsttsStatus;

/**
 * LPCNet feature frames, 20 values per frame.
 */
typedef struct CsttsFeatures CsttsFeatures;

/**
 * Lexicon and symbol table.
 */
typedef struct CsttsFrontend CsttsFrontend;

/**
 * A trained TTS model. Synthesis only reads it, so one handle may serve
 * several threads at once.
 */
typedef struct CsttsTtsModel CsttsTtsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cstts_last_error_message(void);

void cstts_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cstts_version(void);

/**
 * Frontend with the built-in demo lexicon.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CsttsStatus cstts_frontend_new_demo(struct CsttsFrontend **out);

/**
 * Frontend from an English lexicon file and an optional translation table
 * (`translations` may be NULL).
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum CsttsStatus cstts_frontend_load(const char *lexicon,
                                     const char *translations,
                                     struct CsttsFrontend **out);

/**
 * # Safety
 * `fe` must come from a frontend constructor and not be used afterwards.
 */
void cstts_frontend_free(struct CsttsFrontend *fe);

/**
 * Number of symbols the frontend emits ids for.
 *
 * # Safety
 * `fe` must be a live frontend handle or NULL.
 */
size_t cstts_frontend_vocab_size(const struct CsttsFrontend *fe);

/**
 * Tokenizes English, pinyin or mixed text into symbol ids. The id count
 * (including the final end-of-utterance id) is written to `len_out` even
 * when `cap` is too small.
 *
 * # Safety
 * `ids` must have room for `cap` values; `text` must be NUL-terminated.
 */
enum CsttsStatus cstts_frontend_tokenize(const struct CsttsFrontend *fe,
                                         const char *text,
                                         uint32_t *ids,
                                         size_t cap,
                                         size_t *len_out);

/**
 * Loads a TTS checkpoint built for the frontend's symbol table.
 *
 * # Safety
 * `path` must be NUL-terminated, `fe` live, `out` writable.
 */
enum CsttsStatus cstts_tts_load(const char *path,
                                const struct CsttsFrontend *fe,
                                struct CsttsTtsModel **out);

/**
 * # Safety
 * `m` must come from [`cstts_tts_load`] and not be used afterwards.
 */
void cstts_tts_free(struct CsttsTtsModel *m);

/**
 * Synthesizes LPCNet features for `text`. `truncated_out` (may be NULL)
 * receives 1 when decoding hit the frame cap.
 *
 * # Safety
 * Handles must be live; `text` NUL-terminated; `out` writable.
 */
enum CsttsStatus cstts_tts_synthesize(const struct CsttsTtsModel *m,
                                      const struct CsttsFrontend *fe,
                                      const char *text,
                                      struct CsttsFeatures **out,
                                      int32_t *truncated_out);

/**
 * LPCNet analysis of 16 kHz mono samples in [-1, 1].
 *
 * # Safety
 * `samples` must point to `n` readable floats.
 */
enum CsttsStatus cstts_features_from_audio(const float *samples,
                                           size_t n,
                                           struct CsttsFeatures **out);

/**
 * Reads a feature file and its `.meta` sidecar.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum CsttsStatus cstts_features_load(const char *path, struct CsttsFeatures **out);

/**
 * # Safety
 * `f` must be live; `path` NUL-terminated.
 */
enum CsttsStatus cstts_features_save(const struct CsttsFeatures *f, const char *path);

/**
 * # Safety
 * `f` must be a live handle or NULL.
 */
size_t cstts_features_frames(const struct CsttsFeatures *f);

/**
 * # Safety
 * `f` must be a live handle or NULL.
 */
size_t cstts_features_dim(const struct CsttsFeatures *f);

/**
 * Copies the frames row-major into `buf`.
 *
 * # Safety
 * `buf` must have room for `cap` floats.
 */
enum CsttsStatus cstts_features_copy(const struct CsttsFeatures *f,
                                     float *buf,
                                     size_t cap,
                                     size_t *len_out);

/**
 * # Safety
 * `f` must come from a features constructor and not be used afterwards.
 */
void cstts_features_free(struct CsttsFeatures *f);

/**
 * Renders features with the DSP vocoder into 16 kHz samples.
 *
 * # Safety
 * `buf` must have room for `cap` floats.
 */
enum CsttsStatus cstts_render(const struct CsttsFeatures *f,
                              uint64_t seed,
                              float *buf,
                              size_t cap,
                              size_t *len_out);

/**
 * Renders features with the DSP vocoder to a 16-bit WAV file.
 *
 * # Safety
 * `f` must be live; `path` NUL-terminated.
 */
enum CsttsStatus cstts_render_wav(const struct CsttsFeatures *f, uint64_t seed, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSTTS_H */
