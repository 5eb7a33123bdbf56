use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use serde_json::Value;
use slt_ffi::*;

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> Value {
    assert!(!p.is_null());
    let v = serde_json::from_str(CStr::from_ptr(p).to_str().unwrap()).unwrap();
    slt_string_free(p);
    v
}

fn last_error() -> String {
    let p = slt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn engine() -> *mut SltEngine {
    let mut e = ptr::null_mut();
    let st = unsafe {
        slt_engine_open(
            fixture("atis.slt").as_ptr(),
            fixture("bilingual.lex").as_ptr(),
            fixture("prefs.jsonl").as_ptr(),
            &mut e,
        )
    };
    assert_eq!(st, SltStatus::Ok);
    e
}

#[test]
fn open_failures() {
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(slt_engine_open(ptr::null(), ptr::null(), ptr::null(), &mut e), SltStatus::NullArgument);
        assert!(last_error().contains("grammar"));
        let missing = c("/nonexistent/grammar.slt");
        assert_eq!(slt_engine_open(missing.as_ptr(), ptr::null(), ptr::null(), &mut e), SltStatus::LoadFailed);
        assert!(e.is_null());
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            slt_engine_open(bad.as_ptr().cast(), ptr::null(), ptr::null(), &mut e),
            SltStatus::InvalidUtf8
        );
        let g = fixture("atis.slt");
        assert_eq!(slt_engine_open(g.as_ptr(), ptr::null(), ptr::null(), ptr::null_mut()), SltStatus::NullArgument);
    }
}

#[test]
fn errors_clear_on_success() {
    let e = engine();
    unsafe {
        assert_eq!(slt_parse(ptr::null_mut(), c("x").as_ptr(), &mut ptr::null_mut()), SltStatus::NullArgument);
        assert!(!slt_last_error().is_null());
        let mut out = ptr::null_mut();
        assert_eq!(slt_parse(e, c("cheap flights").as_ptr(), &mut out), SltStatus::Ok);
        assert!(slt_last_error().is_null());
        slt_string_free(out);
        slt_engine_free(e);
    }
}

#[test]
fn parse_and_translate() {
    let e = engine();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(slt_parse(e, c("show me the flights to boston").as_ptr(), &mut out), SltStatus::Ok);
        let v = take(out);
        assert!(!v["analyses"].as_array().unwrap().is_empty());
        assert_eq!(v["stages"][0]["stage"], "raw");

        let mut out = ptr::null_mut();
        assert_eq!(slt_translate(e, c("show me the cheap flights").as_ptr(), 5000, &mut out), SltStatus::Ok);
        let v = take(out);
        let it = v["iterations"].as_array().unwrap();
        assert_eq!(it.last().unwrap()["text"], "montrez moi le vols economique");

        let mut out = ptr::null_mut();
        assert_eq!(slt_translate(e, c("flights").as_ptr(), 0, &mut out), SltStatus::InvalidArgument);
        assert!(out.is_null());
        slt_engine_free(e);
    }
}

#[test]
fn session_round_trip() {
    let e = engine();
    unsafe {
        let mut s = ptr::null_mut();
        let text = c("show me the flights to boston on monday");
        assert_eq!(slt_session_open(e, text.as_ptr(), &mut s), SltStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(slt_session_discriminants(s, &mut out), SltStatus::Ok);
        let v = take(out);
        let n = v["analyses"].as_u64().unwrap();
        assert!(n >= 2);
        assert_eq!(v["status"], "open");

        let mut out = ptr::null_mut();
        assert_eq!(slt_session_resolve(s, false, &mut out), SltStatus::Unresolved);

        let key = c(v["discriminants"][0]["key"].as_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(slt_session_judge(s, key.as_ptr(), true, 1, &mut out), SltStatus::Ok);
        let outcome = take(out);
        assert!(outcome["remaining"].as_u64().unwrap() < n);
        let mut out = ptr::null_mut();
        assert_eq!(slt_session_judge(s, key.as_ptr(), true, 2, &mut out), SltStatus::Conflict);
        assert_eq!(slt_session_judge(s, c("NP:nonsense").as_ptr(), true, 3, &mut out), SltStatus::InvalidArgument);

        assert_eq!(slt_session_undo(s), SltStatus::Ok);
        assert_eq!(slt_session_undo(s), SltStatus::Conflict);

        // annotate to the end by accepting whatever is presented
        loop {
            let mut out = ptr::null_mut();
            slt_session_discriminants(s, &mut out);
            let v = take(out);
            if v["status"] != "open" {
                break;
            }
            let d = v["discriminants"].as_array().unwrap().iter().find(|d| d["verdict"].is_null()).unwrap();
            let k = c(d["key"].as_str().unwrap());
            let mut out = ptr::null_mut();
            assert_eq!(slt_session_judge(s, k.as_ptr(), true, 4, &mut out), SltStatus::Ok);
            slt_string_free(out);
        }
        let mut out = ptr::null_mut();
        assert_eq!(slt_session_resolve(s, true, &mut out), SltStatus::Ok);
        let v = take(out);
        assert!(!v["approved"].as_array().unwrap().is_empty());
        slt_session_free(s);

        let mut s = ptr::null_mut();
        assert_eq!(slt_session_open(e, c("zzz").as_ptr(), &mut s), SltStatus::NoParse);
        assert!(s.is_null());
        slt_engine_free(e);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        slt_engine_free(ptr::null_mut());
        slt_session_free(ptr::null_mut());
        slt_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(slt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
