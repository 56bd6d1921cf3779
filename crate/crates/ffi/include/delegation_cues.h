#ifndef DELEGATION_CUES_H
#define DELEGATION_CUES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_ARGUMENT = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_IO = 3,
  DC_STATUS_PARSE = 4,
  DC_STATUS_VERSION_MISMATCH = 5,
  DC_STATUS_INVALID_STATE = 6,
  DC_STATUS_UNKNOWN_CLUSTER = 7,
  DC_STATUS_RETIRED_CLUSTER = 8,
  DC_STATUS_NOT_FOUND = 9,
  DC_STATUS_INTERNAL = 10,
} DcStatus;

// Loaded task model, signal artifact and policy, plus the accountability log.
typedef struct DcEngine DcEngine;

// One delegation session.
typedef struct DcSession DcSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load an engine. `policy_path` and `log_path` may be null: the default
// policy is used, and the log is kept in memory.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum DcStatus dc_engine_open(const char *task_model_path,
                             const char *signals_path,
                             const char *policy_path,
                             const char *log_path,
                             struct DcEngine **out);

// # Safety
// `engine` must be null or come from [`dc_engine_open`] and not be used again.
void dc_engine_free(struct DcEngine *engine);

// Propose a task type for `prompt`.
//
// # Safety
// Pointers must be valid; `out_cluster` and `out_confidence` writable.
enum DcStatus dc_engine_assign(const struct DcEngine *engine,
                               const char *prompt,
                               size_t *out_cluster,
                               double *out_confidence);

// Win rate of `model` on `cluster`; `NotFound` when there is no evidence.
//
// # Safety
// Pointers must be valid; `out` writable.
enum DcStatus dc_engine_win_rate(const struct DcEngine *engine,
                                 const char *model,
                                 size_t cluster,
                                 double *out);

// Tie rate of `cluster`; `NotFound` when there is no evidence.
//
// # Safety
// Pointers must be valid; `out` writable.
enum DcStatus dc_engine_tie_rate(const struct DcEngine *engine, size_t cluster, double *out);

// Open a session. `retain_prompt`: negative uses the policy default, zero
// drops the prompt from the log, positive keeps it.
//
// # Safety
// Pointers must be valid; `out` writable.
enum DcStatus dc_session_open(const struct DcEngine *engine,
                              const char *session_id,
                              const char *prompt,
                              int32_t retain_prompt,
                              struct DcSession **out);

// Accept the proposed task type and route.
//
// # Safety
// Both handles must be valid.
enum DcStatus dc_session_confirm(const struct DcEngine *engine, struct DcSession *session);

// Replace the proposed task type with `cluster` and route.
//
// # Safety
// Both handles must be valid.
enum DcStatus dc_session_override(const struct DcEngine *engine,
                                  struct DcSession *session,
                                  size_t cluster);

// Answer the pending clarifying question.
//
// # Safety
// Handles must be valid; `answer` NUL-terminated.
enum DcStatus dc_session_clarify(const struct DcEngine *engine,
                                 struct DcSession *session,
                                 const char *answer);

// Execute with the built-in echo executor, log and close the session.
//
// # Safety
// Handles must be valid; `out_entry_id` writable.
enum DcStatus dc_session_execute_mock(struct DcEngine *engine,
                                      struct DcSession *session,
                                      uint64_t *out_entry_id);

// Status label of the session (`TYPED`, `CONFIRMED`, ...). Static string;
// do not free.
//
// # Safety
// `session` must be null or valid.
const char *dc_session_status(const struct DcSession *session);

// Serialize the session as JSON. Free the result with [`dc_string_free`].
//
// # Safety
// `session` must be valid; `out` writable.
enum DcStatus dc_session_to_json(const struct DcSession *session, char **out);

// # Safety
// `session` must be null or come from [`dc_session_open`].
void dc_session_free(struct DcSession *session);

// # Safety
// `s` must be null or a string returned by this library.
void dc_string_free(char *s);

// Message of the last failure on this thread, or null. Valid until the next
// failing call on the same thread; do not free.
const char *dc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELEGATION_CUES_H */
