#ifndef SMAAD_H
#define SMAAD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum SmaadStatus {
  SMAAD_STATUS_OK = 0,
  SMAAD_STATUS_NULL_ARGUMENT = 1,
  SMAAD_STATUS_INVALID_UTF8 = 2,
  SMAAD_STATUS_INVALID_JSON = 3,
  SMAAD_STATUS_PACK_ERROR = 4,
  SMAAD_STATUS_CASE_BASE_ERROR = 5,
  SMAAD_STATUS_UNKNOWN_SIGN = 6,
  SMAAD_STATUS_INVALID_VALUE = 7,
  SMAAD_STATUS_UNKNOWN_PROPOSAL = 8,
  SMAAD_STATUS_SESSION_CLOSED = 9,
  SMAAD_STATUS_SESSION_STATE = 10,
  SMAAD_STATUS_ENGINE_ERROR = 11,
  SMAAD_STATUS_PANIC = 12,
} SmaadStatus;

// Session status as reported by [`smaad_session_status`].
typedef enum SmaadSessionStatus {
  SMAAD_SESSION_STATUS_ACTIVE = 0,
  SMAAD_SESSION_STATUS_AWAITING_USER = 1,
  SMAAD_SESSION_STATUS_COMPLETED = 2,
  SMAAD_SESSION_STATUS_FAILED = 3,
} SmaadSessionStatus;

// A loaded knowledge pack bound to a case base.
typedef struct SmaadEngine SmaadEngine;

// One consultation.
typedef struct SmaadSession SmaadSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. The pointer
// stays valid until the next smaad call on the same thread.
const char *smaad_last_error(void);

// Library version as a static string.
const char *smaad_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void smaad_string_free(char *s);

// Loads a pack and opens a case base.
//
// `pack` is a pack directory or the id of the built-in pack; null selects
// the built-in pack. `case_dir` is a case base directory; null keeps cases
// in memory.
//
// # Safety
// String arguments must be null or nul-terminated; `out` must be writable.
enum SmaadStatus smaad_engine_new(const char *pack, const char *case_dir, struct SmaadEngine **out);

// # Safety
// `engine` must be null or a handle from [`smaad_engine_new`] that has not
// been freed. Sessions created from it remain valid.
void smaad_engine_free(struct SmaadEngine *engine);

// Number of cases in the engine's case base.
//
// # Safety
// `engine` must be a live handle and `out` writable.
enum SmaadStatus smaad_engine_case_count(const struct SmaadEngine *engine, uintptr_t *out);

// Starts a session with initial findings, a JSON object of sign to value
// (`{"SO1": "present"}`); null means no findings.
//
// # Safety
// `engine` must be a live handle, `findings_json` null or nul-terminated,
// `out` writable.
enum SmaadStatus smaad_session_start(const struct SmaadEngine *engine,
                                     const char *findings_json,
                                     struct SmaadSession **out);

// # Safety
// `session` must be null or a handle from [`smaad_session_start`] that has
// not been freed.
void smaad_session_free(struct SmaadSession *session);

// # Safety
// `session` must be a live handle and `out` writable.
enum SmaadStatus smaad_session_status(const struct SmaadSession *session,
                                      enum SmaadSessionStatus *out);

// Records an answer (`"present"`, `"absent"`, `"positive:<label>"`, ...).
// When `entries_out` is not null it receives the new log entries as a JSON
// array.
//
// # Safety
// `session` must be a live handle, strings nul-terminated, `entries_out`
// null or writable.
enum SmaadStatus smaad_session_answer(struct SmaadSession *session,
                                      const char *sign,
                                      const char *value,
                                      char **entries_out);

// Validates a pending proposal.
//
// # Safety
// As for [`smaad_session_answer`].
enum SmaadStatus smaad_session_validate(struct SmaadSession *session,
                                        const char *proposal_id,
                                        char **entries_out);

// Rejects a pending proposal; `note` may be null.
//
// # Safety
// As for [`smaad_session_answer`].
enum SmaadStatus smaad_session_reject(struct SmaadSession *session,
                                      const char *proposal_id,
                                      const char *note,
                                      char **entries_out);

// Applies elapsed time: agents past their deadline abandon.
//
// # Safety
// `session` must be a live handle.
enum SmaadStatus smaad_session_advance(struct SmaadSession *session, uint64_t ms);

// Writes a JSON object with the session status, pending questions, pending
// proposals, stage results, failure and retained case id.
//
// # Safety
// `session` must be a live handle and `out` writable.
enum SmaadStatus smaad_session_snapshot(const struct SmaadSession *session, char **out);

// Writes the message log from sequence number `from` as JSON lines.
//
// # Safety
// `session` must be a live handle and `out` writable.
enum SmaadStatus smaad_session_log(const struct SmaadSession *session, uint64_t from, char **out);

// Runs a scenario document without a user and writes the run trace JSON,
// listing up to five similar prior cases. The returned status is `Ok` whatever the outcome; the outcome is in the
// trace.
//
// # Safety
// `engine` must be a live handle, `scenario_json` nul-terminated, `out`
// writable.
enum SmaadStatus smaad_run_scenario(const struct SmaadEngine *engine,
                                    const char *scenario_json,
                                    char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMAAD_H */
