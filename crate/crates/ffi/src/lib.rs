//! C ABI over the delegation engine.
//!
//! Handles are opaque; every call returns a [`DcStatus`] and writes results
//! through out-pointers. On failure the message is kept per thread and can be
//! read with [`dc_last_error_message`]. Strings returned to C are owned by the
//! caller and must be released with [`dc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use delegation_cues::delegation::{
    DelegationEngine, DelegationError, DelegationSession, LogError, LogStore, MockExecutor, PolicyConfig, SystemClock,
};
use delegation_cues::signals::{SignalArtifact, SignalError};
use delegation_cues::tasktyping::{TaskTypeModel, TaskTypingError};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    VersionMismatch = 5,
    InvalidState = 6,
    UnknownCluster = 7,
    RetiredCluster = 8,
    NotFound = 9,
    Internal = 10,
}

/// Loaded task model, signal artifact and policy, plus the accountability log.
pub struct DcEngine {
    engine: DelegationEngine,
    log: LogStore,
}

/// One delegation session.
pub struct DcSession {
    session: DelegationSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DcStatus, msg: impl Into<String>) -> DcStatus {
    set_error(msg);
    status
}

fn typing_status(e: &TaskTypingError) -> DcStatus {
    match e {
        TaskTypingError::Io(_) => DcStatus::Io,
        TaskTypingError::VersionMismatch { .. } => DcStatus::VersionMismatch,
        TaskTypingError::Corrupt(_) => DcStatus::Parse,
        TaskTypingError::EmptyPrompt => DcStatus::InvalidState,
        _ => DcStatus::Internal,
    }
}

fn delegation_status(e: &DelegationError) -> DcStatus {
    use DelegationError as E;
    match e {
        E::VersionMismatch { .. } => DcStatus::VersionMismatch,
        E::TaskTyping(t) => typing_status(t),
        E::InvalidPolicy(_) => DcStatus::Parse,
        E::UnknownCluster { .. } => DcStatus::UnknownCluster,
        E::RetiredCluster { .. } => DcStatus::RetiredCluster,
        E::InvalidTransition { .. }
        | E::NotRouted
        | E::AlreadyRouted
        | E::ClarificationBudget
        | E::NotHighAssurance
        | E::ClarifyNotActive
        | E::NoPendingQuestion
        | E::AlreadyLogged(_) => DcStatus::InvalidState,
        E::NoModels | E::NoAuditor { .. } => DcStatus::NotFound,
        E::Log(LogError::Io(_)) => DcStatus::Io,
        E::Log(LogError::NotFound(_) | LogError::Forgotten(_)) => DcStatus::NotFound,
        E::Log(LogError::Corrupt { .. }) => DcStatus::Parse,
        E::Executor(_) => DcStatus::Internal,
    }
}

fn from_delegation(e: DelegationError) -> DcStatus {
    fail(delegation_status(&e), e.to_string())
}

/// Borrow a C string as `&str`.
///
/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, DcStatus> {
    if p.is_null() {
        return Err(fail(DcStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, DcStatus> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

macro_rules! try_dc {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(DcStatus::NullArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

fn load_engine(
    task_model: &str,
    signals: &str,
    policy: Option<&str>,
    log: Option<&str>,
) -> Result<DcEngine, DcStatus> {
    let model = TaskTypeModel::load(task_model).map_err(|e| fail(typing_status(&e), e.to_string()))?;
    let signals = SignalArtifact::load(signals).map_err(|e| {
        let status = match e {
            SignalError::Io(_) => DcStatus::Io,
            SignalError::VersionMismatch { .. } => DcStatus::VersionMismatch,
            _ => DcStatus::Parse,
        };
        fail(status, e.to_string())
    })?;
    let policy_config = match policy {
        Some(p) => PolicyConfig::load(p).map_err(from_delegation)?,
        None => PolicyConfig::default(),
    };
    let policy = policy_config.resolve(&signals).map_err(from_delegation)?;
    let engine = DelegationEngine::new(Arc::new(model), Arc::new(signals), policy).map_err(from_delegation)?;
    let clock = Arc::new(SystemClock);
    let log = match log {
        Some(p) => LogStore::open(Path::new(p), clock).map_err(|e| from_delegation(e.into()))?,
        None => LogStore::in_memory(clock),
    };
    Ok(DcEngine { engine, log })
}

/// Load an engine. `policy_path` and `log_path` may be null: the default
/// policy is used, and the log is kept in memory.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_open(
    task_model_path: *const c_char,
    signals_path: *const c_char,
    policy_path: *const c_char,
    log_path: *const c_char,
    out: *mut *mut DcEngine,
) -> DcStatus {
    non_null!(out);
    *out = ptr::null_mut();
    let tm = try_dc!(text(task_model_path, "task_model_path"));
    let sig = try_dc!(text(signals_path, "signals_path"));
    let pol = try_dc!(optional_text(policy_path, "policy_path"));
    let log = try_dc!(optional_text(log_path, "log_path"));
    let engine = try_dc!(load_engine(tm, sig, pol, log));
    *out = Box::into_raw(Box::new(engine));
    DcStatus::Ok
}

/// # Safety
/// `engine` must be null or come from [`dc_engine_open`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_free(engine: *mut DcEngine) {
    if !engine.is_null() {
        let mut engine = Box::from_raw(engine);
        let _ = engine.log.flush();
    }
}

/// Propose a task type for `prompt`.
///
/// # Safety
/// Pointers must be valid; `out_cluster` and `out_confidence` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_assign(
    engine: *const DcEngine,
    prompt: *const c_char,
    out_cluster: *mut usize,
    out_confidence: *mut f64,
) -> DcStatus {
    non_null!(engine, out_cluster, out_confidence);
    let prompt = try_dc!(text(prompt, "prompt"));
    let tm = (*engine).engine.task_model();
    match tm.assign(prompt, &tm.embedder) {
        Ok(a) => {
            *out_cluster = a.cluster;
            *out_confidence = a.confidence;
            DcStatus::Ok
        }
        Err(e) => fail(typing_status(&e), e.to_string()),
    }
}

/// Win rate of `model` on `cluster`; `NotFound` when there is no evidence.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_win_rate(
    engine: *const DcEngine,
    model: *const c_char,
    cluster: usize,
    out: *mut f64,
) -> DcStatus {
    non_null!(engine, out);
    let model = try_dc!(text(model, "model"));
    match (*engine).engine.signals().win_rate(model, cluster) {
        Some(r) => {
            *out = r;
            DcStatus::Ok
        }
        None => fail(DcStatus::NotFound, format!("no comparisons for {model} on cluster {cluster}")),
    }
}

/// Tie rate of `cluster`; `NotFound` when there is no evidence.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_engine_tie_rate(engine: *const DcEngine, cluster: usize, out: *mut f64) -> DcStatus {
    non_null!(engine, out);
    match (*engine).engine.signals().tie_rate(cluster) {
        Some(r) => {
            *out = r;
            DcStatus::Ok
        }
        None => fail(DcStatus::NotFound, format!("no tie evidence for cluster {cluster}")),
    }
}

/// Open a session. `retain_prompt`: negative uses the policy default, zero
/// drops the prompt from the log, positive keeps it.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_session_open(
    engine: *const DcEngine,
    session_id: *const c_char,
    prompt: *const c_char,
    retain_prompt: i32,
    out: *mut *mut DcSession,
) -> DcStatus {
    non_null!(engine, out);
    *out = ptr::null_mut();
    let id = try_dc!(text(session_id, "session_id"));
    let prompt = try_dc!(text(prompt, "prompt"));
    let retain = (retain_prompt >= 0).then_some(retain_prompt > 0);
    match (*engine).engine.open(id, prompt, retain) {
        Ok(session) => {
            *out = Box::into_raw(Box::new(DcSession { session }));
            DcStatus::Ok
        }
        Err(e) => from_delegation(e),
    }
}

/// Accept the proposed task type and route.
///
/// # Safety
/// Both handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_session_confirm(engine: *const DcEngine, session: *mut DcSession) -> DcStatus {
    non_null!(engine, session);
    match (*engine).engine.confirm(&mut (*session).session) {
        Ok(()) => DcStatus::Ok,
        Err(e) => from_delegation(e),
    }
}

/// Replace the proposed task type with `cluster` and route.
///
/// # Safety
/// Both handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_session_override(
    engine: *const DcEngine,
    session: *mut DcSession,
    cluster: usize,
) -> DcStatus {
    non_null!(engine, session);
    match (*engine).engine.override_cluster(&mut (*session).session, cluster) {
        Ok(()) => DcStatus::Ok,
        Err(e) => from_delegation(e),
    }
}

/// Answer the pending clarifying question.
///
/// # Safety
/// Handles must be valid; `answer` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dc_session_clarify(
    engine: *const DcEngine,
    session: *mut DcSession,
    answer: *const c_char,
) -> DcStatus {
    non_null!(engine, session);
    let answer = try_dc!(text(answer, "answer"));
    match (*engine).engine.clarify(&mut (*session).session, answer) {
        Ok(()) => DcStatus::Ok,
        Err(e) => from_delegation(e),
    }
}

/// Execute with the built-in echo executor, log and close the session.
///
/// # Safety
/// Handles must be valid; `out_entry_id` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_session_execute_mock(
    engine: *mut DcEngine,
    session: *mut DcSession,
    out_entry_id: *mut u64,
) -> DcStatus {
    non_null!(engine, session, out_entry_id);
    let DcEngine { engine, log } = &mut *engine;
    match engine.execute(&mut (*session).session, &MockExecutor, log) {
        Ok(entry) => {
            *out_entry_id = entry.entry_id;
            DcStatus::Ok
        }
        Err(e) => from_delegation(e),
    }
}

/// Status label of the session (`TYPED`, `CONFIRMED`, ...). Static string;
/// do not free.
///
/// # Safety
/// `session` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn dc_session_status(session: *const DcSession) -> *const c_char {
    if session.is_null() {
        return ptr::null();
    }
    use delegation_cues::delegation::SessionStatus as S;
    let s: &'static CStr = match (*session).session.status {
        S::Typed => c"TYPED",
        S::Confirmed => c"CONFIRMED",
        S::Executed => c"EXECUTED",
        S::Repaired => c"REPAIRED",
        S::Closed => c"CLOSED",
    };
    s.as_ptr()
}

/// Serialize the session as JSON. Free the result with [`dc_string_free`].
///
/// # Safety
/// `session` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_session_to_json(session: *const DcSession, out: *mut *mut c_char) -> DcStatus {
    non_null!(session, out);
    *out = ptr::null_mut();
    let json = match serde_json::to_string(&(*session).session) {
        Ok(j) => j,
        Err(e) => return fail(DcStatus::Internal, e.to_string()),
    };
    match CString::new(json) {
        Ok(c) => {
            *out = c.into_raw();
            DcStatus::Ok
        }
        Err(e) => fail(DcStatus::Internal, e.to_string()),
    }
}

/// # Safety
/// `session` must be null or come from [`dc_session_open`].
#[no_mangle]
pub unsafe extern "C" fn dc_session_free(session: *mut DcSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn dc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
