#include <stdio.h>
#include <string.h>

#include "smaad.h"

static int fail(const char *what, SmaadStatus status) {
  const char *message = smaad_last_error();
  fprintf(stderr, "%s: status %d: %s\n", what, (int)status, message ? message : "(none)");
  return 1;
}

int main(void) {
  SmaadEngine *engine = NULL;
  SmaadStatus status = smaad_engine_new(NULL, NULL, &engine);
  if (status != SMAAD_STATUS_OK) return fail("engine", status);

  SmaadSession *session = NULL;
  status = smaad_session_start(engine, "{\"SO1\": \"absent\"}", &session);
  if (status != SMAAD_STATUS_OK) return fail("start", status);

  SmaadSessionStatus state;
  smaad_session_status(session, &state);
  if (state != SMAAD_SESSION_STATUS_FAILED) return fail("expected a failed session", status);

  status = smaad_session_answer(session, "SE1", "present", NULL);
  if (status != SMAAD_STATUS_SESSION_CLOSED) return fail("answer after failure", status);
  if (smaad_last_error() == NULL) return fail("missing error message", status);

  char *log = NULL;
  status = smaad_session_log(session, 0, &log);
  if (status != SMAAD_STATUS_OK) return fail("log", status);
  size_t lines = 0;
  for (const char *c = log; *c; c++) lines += *c == '\n';
  printf("version %s, %zu log lines\n", smaad_version(), lines);
  smaad_string_free(log);

  smaad_session_free(session);
  smaad_engine_free(engine);
  return 0;
}
