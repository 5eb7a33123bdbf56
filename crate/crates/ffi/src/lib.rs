//! C interface to the workbench.
//!
//! Handles are opaque. Every fallible call returns an [`SltStatus`] and writes
//! its result through an out-pointer; strings handed to the caller are JSON
//! and must be released with [`slt_string_free`]. After a failure,
//! [`slt_last_error`] describes it until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use slt_core::chart::{analyses_of, Engine};
use slt_core::pipeline::{ResourcePaths, Resources};
use slt_core::treebanker::{build_incidence, ResolveMode, Session, TreebankError, Verdict};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SltStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    NoParse = 4,
    InvalidArgument = 5,
    Conflict = 6,
    Unresolved = 7,
    Panic = 99,
}

/// Loaded grammar, lexicon and preferences.
pub struct SltEngine {
    res: Resources,
}

/// Annotation session over one sentence's analyses.
pub struct SltSession {
    text: String,
    session: Session,
}

struct Failure(SltStatus, String);

impl Failure {
    fn new(status: SltStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<TreebankError> for Failure {
    fn from(e: TreebankError) -> Self {
        let status = match e {
            TreebankError::NoAnalyses => SltStatus::NoParse,
            TreebankError::UnknownDiscriminant(_) => SltStatus::InvalidArgument,
            TreebankError::Unresolved(_) => SltStatus::Unresolved,
            TreebankError::AlreadyDecided(_)
            | TreebankError::Contradiction
            | TreebankError::NothingToUndo
            | TreebankError::AlreadyResolved => SltStatus::Conflict,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SltStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SltStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SltStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SltStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SltStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(SltStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put_json(out: *mut *mut c_char, v: &serde_json::Value) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SltStatus::NullArgument, "output pointer is null"));
    }
    let c = CString::new(v.to_string()).map_err(|e| Failure::new(SltStatus::Panic, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::new(SltStatus::Panic, e.to_string()))
}

/// Loads a grammar file and, when the paths are non-null, a bilingual
/// lexicon and a preference file.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slt_engine_open(
    grammar: *const c_char,
    lexicon: *const c_char,
    prefs: *const c_char,
    out: *mut *mut SltEngine,
) -> SltStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(SltStatus::NullArgument, "output pointer is null"));
        }
        let paths = ResourcePaths {
            grammar: PathBuf::from(text(grammar, "grammar path")?),
            lexicon: opt_path(lexicon, "lexicon path")?,
            prefs: opt_path(prefs, "preferences path")?,
            ..ResourcePaths::default()
        };
        let res = Resources::load(&paths).map_err(|e| Failure::new(SltStatus::LoadFailed, format!("{e:#}")))?;
        *out = Box::into_raw(Box::new(SltEngine { res }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`slt_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slt_engine_free(engine: *mut SltEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Parses a sentence and writes the stage outputs as JSON.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_parse(engine: *mut SltEngine, sentence: *const c_char, out_json: *mut *mut c_char) -> SltStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let s = text(sentence, "sentence")?;
        let r = e.res.parse_text(s).map_err(|e| Failure::new(SltStatus::NoParse, format!("{e:#}")))?;
        put_json(out_json, &to_json(&r)?)
    })
}

/// Runs the anytime translator for at most `time_limit_ms` and writes every
/// emitted iteration as JSON.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_translate(
    engine: *mut SltEngine,
    sentence: *const c_char,
    time_limit_ms: u64,
    out_json: *mut *mut c_char,
) -> SltStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let s = text(sentence, "sentence")?;
        if time_limit_ms == 0 {
            return Err(Failure::new(SltStatus::InvalidArgument, "time limit must be positive"));
        }
        let it = e
            .res
            .translate_text(s, Duration::from_millis(time_limit_ms))
            .map_err(|e| Failure::new(SltStatus::NoParse, format!("{e:#}")))?;
        put_json(out_json, &json!({ "iterations": it }))
    })
}

/// Starts an annotation session over the full analyses of `sentence`.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_session_open(
    engine: *mut SltEngine,
    sentence: *const c_char,
    out: *mut *mut SltSession,
) -> SltStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let s = text(sentence, "sentence")?;
        if out.is_null() {
            return Err(Failure::new(SltStatus::NullArgument, "output pointer is null"));
        }
        let g = &e.res.grammar;
        let analyses = analyses_of(s, g, None, Engine::Chart).map_err(|e| Failure::new(SltStatus::NoParse, e.to_string()))?;
        if analyses.is_empty() {
            return Err(Failure::new(SltStatus::NoParse, format!("no analyses for `{s}`")));
        }
        let m = build_incidence(&analyses, g)?;
        *out = Box::into_raw(Box::new(SltSession {
            text: s.to_string(),
            session: Session::new(Arc::new(m)),
        }));
        Ok(())
    })
}

/// # Safety
/// `session` must come from [`slt_session_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slt_session_free(session: *mut SltSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Writes the session state and its presentable discriminants as JSON.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_session_discriminants(session: *mut SltSession, out_json: *mut *mut c_char) -> SltStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let m = s.session.matrix();
        let rows: Vec<_> = m
            .presentable()
            .iter()
            .map(|&d| {
                let (verdict, source) = s.session.verdict(d).unzip();
                json!({
                    "key": m.discriminants[d].key,
                    "span": m.span(d),
                    "holds_in": m.incidence(d).len(),
                    "verdict": verdict,
                    "source": source,
                })
            })
            .collect();
        put_json(
            out_json,
            &json!({
                "text": s.text,
                "analyses": m.analysis_count(),
                "remaining": s.session.remaining_count(),
                "status": s.session.status(),
                "discriminants": rows,
            }),
        )
    })
}

/// Records a user verdict on discriminant `key` and writes the outcome
/// (remaining count, propagated verdicts, status) as JSON.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_session_judge(
    session: *mut SltSession,
    key: *const c_char,
    correct: bool,
    timestamp_ms: u64,
    out_json: *mut *mut c_char,
) -> SltStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let k = text(key, "discriminant key")?;
        let verdict = if correct { Verdict::Correct } else { Verdict::Incorrect };
        let outcome = s.session.judge(k, verdict, timestamp_ms)?;
        put_json(out_json, &to_json(&outcome)?)
    })
}

/// Retracts the most recent user judgment and what it propagated.
///
/// # Safety
/// `session` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn slt_session_undo(session: *mut SltSession) -> SltStatus {
    guard(|| {
        handle(session, "session")?.session.undo()?;
        Ok(())
    })
}

/// Resolves the session. With `accept_set` false a single remaining
/// analysis is required. Writes the approved analysis signatures as JSON.
///
/// # Safety
/// Pointers must be valid as described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn slt_session_resolve(session: *mut SltSession, accept_set: bool, out_json: *mut *mut c_char) -> SltStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let mode = if accept_set { ResolveMode::AcceptSet } else { ResolveMode::UniqueRequired };
        let approved = s.session.resolve(mode)?;
        let m = s.session.matrix();
        let sigs: Vec<&str> = approved.iter().map(|&a| m.analyses[a].as_str()).collect();
        put_json(out_json, &json!({ "approved": sigs }))
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn slt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn slt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn slt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
