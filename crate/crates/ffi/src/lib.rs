//! C interface to the smaad engine.
//!
//! Engines and sessions are opaque handles. Every fallible function returns a
//! [`SmaadStatus`]; on failure a description is available from
//! [`smaad_last_error`] on the same thread until the next call. Strings
//! returned through out-parameters are owned by the caller and released with
//! [`smaad_string_free`]. Structured data crosses the boundary as UTF-8 JSON.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use serde_json::json;

use smaad::agency::{AgencyError, Engine, SessionStatus, Supervisor};
use smaad::casebase::CaseBase;
use smaad::domain::{DomainPack, Scenario};
use smaad::headless::{run_scenario, RunOptions};
use smaad::memory::FindingValue;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmaadStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    PackError = 4,
    CaseBaseError = 5,
    UnknownSign = 6,
    InvalidValue = 7,
    UnknownProposal = 8,
    SessionClosed = 9,
    SessionState = 10,
    EngineError = 11,
    Panic = 12,
}

/// Session status as reported by [`smaad_session_status`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmaadSessionStatus {
    Active = 0,
    AwaitingUser = 1,
    Completed = 2,
    Failed = 3,
}

impl From<SessionStatus> for SmaadSessionStatus {
    fn from(status: SessionStatus) -> Self {
        match status {
            SessionStatus::Active => SmaadSessionStatus::Active,
            SessionStatus::AwaitingUser => SmaadSessionStatus::AwaitingUser,
            SessionStatus::Completed => SmaadSessionStatus::Completed,
            SessionStatus::Failed => SmaadSessionStatus::Failed,
        }
    }
}

/// A loaded knowledge pack bound to a case base.
pub struct SmaadEngine {
    engine: Engine,
}

/// One consultation.
pub struct SmaadSession {
    supervisor: Supervisor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SmaadStatus, String);

impl From<AgencyError> for Failure {
    fn from(e: AgencyError) -> Self {
        let status = match &e {
            AgencyError::UnknownSign(_) => SmaadStatus::UnknownSign,
            AgencyError::InvalidValue { .. } => SmaadStatus::InvalidValue,
            AgencyError::UnknownProposal(_) => SmaadStatus::UnknownProposal,
            AgencyError::SessionClosed(_) => SmaadStatus::SessionClosed,
            AgencyError::AlreadyStarted | AgencyError::NotStarted => SmaadStatus::SessionState,
            _ => SmaadStatus::EngineError,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SmaadStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SmaadStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {message}"));
            SmaadStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(SmaadStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(SmaadStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn optional_text<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        Ok(None)
    } else {
        text(ptr, what).map(Some)
    }
}

unsafe fn handle<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| Failure(SmaadStatus::NullArgument, format!("{what} is null")))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(SmaadStatus::NullArgument, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    check_out(out)?;
    let value = CString::new(value).map_err(|e| Failure(SmaadStatus::EngineError, e.to_string()))?;
    *out = value.into_raw();
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(SmaadStatus::InvalidJson, format!("{what}: {e}")))
}

fn entries_json(entries: &[smaad::agency::LogEntry]) -> String {
    serde_json::to_string(entries).expect("log entries serialize")
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next smaad call on the same thread.
#[no_mangle]
pub extern "C" fn smaad_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn smaad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn smaad_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a pack and opens a case base.
///
/// `pack` is a pack directory or the id of the built-in pack; null selects
/// the built-in pack. `case_dir` is a case base directory; null keeps cases
/// in memory.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_engine_new(
    pack: *const c_char,
    case_dir: *const c_char,
    out: *mut *mut SmaadEngine,
) -> SmaadStatus {
    guard(|| {
        check_out(out)?;
        let pack = match optional_text(pack, "pack")? {
            Some(pack) => DomainPack::resolve(pack).map_err(|e| Failure(SmaadStatus::PackError, e.to_string()))?,
            None => DomainPack::builtin(),
        };
        let cases = match optional_text(case_dir, "case_dir")? {
            Some(dir) => CaseBase::open(dir).map_err(|e| Failure(SmaadStatus::CaseBaseError, e.to_string()))?,
            None => CaseBase::in_memory(),
        };
        let engine = Engine::new(Arc::new(pack)).with_cases(cases.shared());
        *out = Box::into_raw(Box::new(SmaadEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from [`smaad_engine_new`] that has not
/// been freed. Sessions created from it remain valid.
#[no_mangle]
pub unsafe extern "C" fn smaad_engine_free(engine: *mut SmaadEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of cases in the engine's case base.
///
/// # Safety
/// `engine` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_engine_case_count(engine: *const SmaadEngine, out: *mut usize) -> SmaadStatus {
    guard(|| {
        check_out(out)?;
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "engine is null".into()))?;
        *out = match &engine.engine.cases {
            Some(cases) => cases.read().unwrap_or_else(|p| p.into_inner()).len(),
            None => 0,
        };
        Ok(())
    })
}

/// Starts a session with initial findings, a JSON object of sign to value
/// (`{"SO1": "present"}`); null means no findings.
///
/// # Safety
/// `engine` must be a live handle, `findings_json` null or nul-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_start(
    engine: *const SmaadEngine,
    findings_json: *const c_char,
    out: *mut *mut SmaadSession,
) -> SmaadStatus {
    guard(|| {
        check_out(out)?;
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "engine is null".into()))?;
        let findings: BTreeMap<String, FindingValue> = match optional_text(findings_json, "findings_json")? {
            Some(text) => parse_json(text, "findings_json")?,
            None => BTreeMap::new(),
        };
        let mut supervisor = engine.engine.supervisor();
        supervisor.start(findings)?;
        *out = Box::into_raw(Box::new(SmaadSession { supervisor }));
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle from [`smaad_session_start`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_free(session: *mut SmaadSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// # Safety
/// `session` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_status(
    session: *const SmaadSession,
    out: *mut SmaadSessionStatus,
) -> SmaadStatus {
    guard(|| {
        check_out(out)?;
        let session = session
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "session is null".into()))?;
        *out = session.supervisor.status().into();
        Ok(())
    })
}

/// Records an answer (`"present"`, `"absent"`, `"positive:<label>"`, ...).
/// When `entries_out` is not null it receives the new log entries as a JSON
/// array.
///
/// # Safety
/// `session` must be a live handle, strings nul-terminated, `entries_out`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_answer(
    session: *mut SmaadSession,
    sign: *const c_char,
    value: *const c_char,
    entries_out: *mut *mut c_char,
) -> SmaadStatus {
    guard(|| {
        let session = handle(session, "session")?;
        let sign = text(sign, "sign")?;
        let value: FindingValue = text(value, "value")?
            .parse()
            .map_err(|e: smaad::memory::MalformedValue| Failure(SmaadStatus::InvalidValue, e.to_string()))?;
        let entries = session.supervisor.answer(sign, value)?;
        if !entries_out.is_null() {
            write_string(entries_out, entries_json(&entries))?;
        }
        Ok(())
    })
}

/// Validates a pending proposal.
///
/// # Safety
/// As for [`smaad_session_answer`].
#[no_mangle]
pub unsafe extern "C" fn smaad_session_validate(
    session: *mut SmaadSession,
    proposal_id: *const c_char,
    entries_out: *mut *mut c_char,
) -> SmaadStatus {
    guard(|| {
        let session = handle(session, "session")?;
        let entries = session.supervisor.validate(text(proposal_id, "proposal_id")?)?;
        if !entries_out.is_null() {
            write_string(entries_out, entries_json(&entries))?;
        }
        Ok(())
    })
}

/// Rejects a pending proposal; `note` may be null.
///
/// # Safety
/// As for [`smaad_session_answer`].
#[no_mangle]
pub unsafe extern "C" fn smaad_session_reject(
    session: *mut SmaadSession,
    proposal_id: *const c_char,
    note: *const c_char,
    entries_out: *mut *mut c_char,
) -> SmaadStatus {
    guard(|| {
        let session = handle(session, "session")?;
        let proposal_id = text(proposal_id, "proposal_id")?;
        let note = optional_text(note, "note")?.map(str::to_string);
        let entries = session.supervisor.reject(proposal_id, note)?;
        if !entries_out.is_null() {
            write_string(entries_out, entries_json(&entries))?;
        }
        Ok(())
    })
}

/// Applies elapsed time: agents past their deadline abandon.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_advance(session: *mut SmaadSession, ms: u64) -> SmaadStatus {
    guard(|| {
        let session = handle(session, "session")?;
        session.supervisor.clock_mut().advance(ms);
        session.supervisor.tick()?;
        Ok(())
    })
}

/// Writes a JSON object with the session status, pending questions, pending
/// proposals, stage results, failure and retained case id.
///
/// # Safety
/// `session` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_snapshot(session: *const SmaadSession, out: *mut *mut c_char) -> SmaadStatus {
    guard(|| {
        let session = session
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "session is null".into()))?;
        let state = session.supervisor.state();
        let proposals: Vec<_> = state
            .pending_proposals()
            .map(|p| json!({ "agent": p.agent, "proposal": p.proposal }))
            .collect();
        let snapshot = json!({
            "status": state.status(),
            "stage": state.current_stage(),
            "findings": state.memory.findings(),
            "pending_questions": state.memory.pending_questions(),
            "pending_proposals": proposals,
            "stage_results": state.memory.stage_results(),
            "failure": state.failure,
            "case_id": state.case_id,
            "next_seq": state.next_seq,
        });
        write_string(out, snapshot.to_string())
    })
}

/// Writes the message log from sequence number `from` as JSON lines.
///
/// # Safety
/// `session` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_session_log(
    session: *const SmaadSession,
    from: u64,
    out: *mut *mut c_char,
) -> SmaadStatus {
    guard(|| {
        let session = session
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "session is null".into()))?;
        let log = session.supervisor.log();
        let start = usize::try_from(from).unwrap_or(usize::MAX).min(log.len());
        let mut lines = String::new();
        for entry in &log[start..] {
            lines.push_str(&entry.to_line());
            lines.push('\n');
        }
        write_string(out, lines)
    })
}

/// Runs a scenario document without a user and writes the run trace JSON,
/// listing up to five similar prior cases. The returned status is `Ok` whatever the outcome; the outcome is in the
/// trace.
///
/// # Safety
/// `engine` must be a live handle, `scenario_json` nul-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn smaad_run_scenario(
    engine: *const SmaadEngine,
    scenario_json: *const c_char,
    out: *mut *mut c_char,
) -> SmaadStatus {
    guard(|| {
        check_out(out)?;
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(SmaadStatus::NullArgument, "engine is null".into()))?;
        let scenario = Scenario::parse(text(scenario_json, "scenario_json")?)
            .map_err(|e| Failure(SmaadStatus::InvalidJson, format!("scenario_json: {e}")))?;
        let options = RunOptions {
            no_timestamps: true,
            seed: None,
            similar_cases: 5,
        };
        let run = run_scenario(&engine.engine, &scenario, &options)
            .map_err(|e| Failure(SmaadStatus::EngineError, e.to_string()))?;
        write_string(out, run.trace.to_json())
    })
}
