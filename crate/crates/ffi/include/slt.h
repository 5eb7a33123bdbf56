#ifndef SLT_H
#define SLT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SltStatus {
  SLT_STATUS_OK = 0,
  SLT_STATUS_NULL_ARGUMENT = 1,
  SLT_STATUS_INVALID_UTF8 = 2,
  SLT_STATUS_LOAD_FAILED = 3,
  SLT_STATUS_NO_PARSE = 4,
  SLT_STATUS_INVALID_ARGUMENT = 5,
  SLT_STATUS_CONFLICT = 6,
  SLT_STATUS_UNRESOLVED = 7,
  SLT_STATUS_PANIC = 99,
} SltStatus;

// Loaded grammar, lexicon and preferences.
typedef struct SltEngine SltEngine;

// Annotation session over one sentence's analyses.
typedef struct SltSession SltSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a grammar file and, when the paths are non-null, a bilingual
// lexicon and a preference file.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum SltStatus slt_engine_open(const char *grammar,
                               const char *lexicon,
                               const char *prefs,
                               struct SltEngine **out);

// # Safety
// `engine` must come from [`slt_engine_open`] and not be used afterwards.
void slt_engine_free(struct SltEngine *engine);

// Parses a sentence and writes the stage outputs as JSON.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_parse(struct SltEngine *engine, const char *sentence, char **out_json);

// Runs the anytime translator for at most `time_limit_ms` and writes every
// emitted iteration as JSON.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_translate(struct SltEngine *engine,
                             const char *sentence,
                             uint64_t time_limit_ms,
                             char **out_json);

// Starts an annotation session over the full analyses of `sentence`.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_session_open(struct SltEngine *engine,
                                const char *sentence,
                                struct SltSession **out);

// # Safety
// `session` must come from [`slt_session_open`] and not be used afterwards.
void slt_session_free(struct SltSession *session);

// Writes the session state and its presentable discriminants as JSON.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_session_discriminants(struct SltSession *session, char **out_json);

// Records a user verdict on discriminant `key` and writes the outcome
// (remaining count, propagated verdicts, status) as JSON.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_session_judge(struct SltSession *session,
                                 const char *key,
                                 bool correct,
                                 uint64_t timestamp_ms,
                                 char **out_json);

// Retracts the most recent user judgment and what it propagated.
//
// # Safety
// `session` must be a live session handle.
enum SltStatus slt_session_undo(struct SltSession *session);

// Resolves the session. With `accept_set` false a single remaining
// analysis is required. Writes the approved analysis signatures as JSON.
//
// # Safety
// Pointers must be valid as described in the module docs.
enum SltStatus slt_session_resolve(struct SltSession *session, bool accept_set, char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library, freed once.
void slt_string_free(char *s);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *slt_last_error(void);

// Library version, statically allocated.
const char *slt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLT_H */
