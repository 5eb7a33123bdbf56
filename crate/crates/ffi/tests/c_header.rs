//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "slt.h"

int main(int argc, char **argv) {
    SltEngine *e = NULL;
    if (slt_engine_open(argv[1], argv[2], argv[3], &e) != SLT_STATUS_OK) return 10;
    char *out = NULL;
    if (slt_translate(e, "show me the cheap flights", 5000, &out) != SLT_STATUS_OK) return 11;
    if (strstr(out, "montrez moi le vols economique") == NULL) return 12;
    slt_string_free(out);

    SltSession *s = NULL;
    if (slt_session_open(e, "show me the flights to boston on monday", &s) != SLT_STATUS_OK) return 13;
    if (slt_session_undo(s) != SLT_STATUS_CONFLICT) return 14;
    if (slt_last_error() == NULL) return 15;
    if (slt_session_judge(s, "NP:nonsense", true, 0, &out) != SLT_STATUS_INVALID_ARGUMENT) return 16;
    slt_session_free(s);
    slt_engine_free(e);
    printf("ok %s\n", slt_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links() {
    let lib = target_dir().join("libslt_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());

    let fixtures = manifest.join("../core/fixtures");
    let out = Command::new(&exe)
        .arg(fixtures.join("atis.slt"))
        .arg(fixtures.join("bilingual.lex"))
        .arg(fixtures.join("prefs.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
