mod common;

use std::process::{Command, Output, Stdio};

use common::fixture;
use serde_json::Value;

fn slt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slt")).args(args).output().expect("run slt")
}

fn ok(args: &[&str]) -> String {
    let out = slt(args);
    assert!(
        out.status.success(),
        "slt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("json on stdout")
}

fn f(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn parse_prints_analyses() {
    let v = json(&["parse", "--grammar", &f("atis.slt"), "--text", "show me the flights to boston"]);
    let a = v["analyses"].as_array().unwrap();
    assert!(!a.is_empty());
    assert!(a.iter().all(|s| s.as_str().unwrap().starts_with("(s_imp")));
}

#[test]
fn parse_stages_starts_raw() {
    let v = json(&["parse", "--grammar", &f("atis.slt"), "--text", "cheap flights", "--stages"]);
    let stages = v["stages"].as_array().unwrap();
    assert_eq!(stages[0]["stage"], "raw");
    assert!(stages.len() >= 3);
}

#[test]
fn unknown_words_become_fragments() {
    let v = json(&["parse", "--grammar", &f("atis.slt"), "--text", "zzz qqq"]);
    assert!(v["analyses"].as_array().unwrap().is_empty());
    assert_eq!(v["fragments"].as_array().unwrap().len(), 2);
}

#[test]
fn translate_reorders_adjectives() {
    let v = json(&[
        "translate",
        "--grammar",
        &f("atis.slt"),
        "--lexicon",
        &f("bilingual.lex"),
        "--prefs",
        &f("prefs.jsonl"),
        "--text",
        "show me the cheap flights",
    ]);
    let it = v["iterations"].as_array().unwrap();
    assert_eq!(it[0]["stage"], "raw");
    assert_eq!(it.last().unwrap()["text"], "montrez moi le vols economique");

    let v = json(&[
        "translate",
        "--grammar",
        &f("atis.slt"),
        "--lexicon",
        &f("bilingual.lex"),
        "--text",
        "the cheap flights",
        "--surface-only",
    ]);
    assert_eq!(v["iterations"].as_array().unwrap().last().unwrap()["text"], "le economique vols");
}

#[test]
fn conflate_builds_a_lattice() {
    let v = json(&["conflate", &f("nbest.txt")]);
    let edges = v["edges"].as_array().unwrap();
    assert!(v["vertices"].as_u64().unwrap() >= 2);
    assert!(edges.iter().any(|e| e["word"] == "flight"));
    assert!(edges.iter().any(|e| e["word"] == "flights"));
}

#[test]
fn parse_from_nbest_with_lr_engine() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.slt");
    let model = dir.path().join("model.jsonl");
    let spec_s = spec.to_string_lossy().into_owned();
    let model_s = model.to_string_lossy().into_owned();
    ok(&["specialize", "--grammar", &f("atis.slt"), "--treebank", &f("treebank.jsonl"), "--out", &spec_s]);
    ok(&["train-prune", "--grammar", &f("atis.slt"), "--treebank", &f("treebank.jsonl"), "--out", &model_s]);

    let text = std::fs::read_to_string(&spec).unwrap();
    assert!(text.contains("macro m01"));
    let header: Value = serde_json::from_str(std::fs::read_to_string(&model).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["alpha"], 1.0);

    let v = json(&[
        "parse",
        "--grammar",
        &f("atis.slt"),
        "--specialized",
        &spec_s,
        "--model",
        &model_s,
        "--engine",
        "lr",
        "--theta",
        "0",
        "--nbest",
        &f("nbest.txt"),
    ]);
    assert!(v["analyses"].as_array().unwrap().len() >= 2);

    let table = json(&["compile-lr", &spec_s]);
    assert_eq!(table["productions"][0], "accept: ^start -> S");
    assert!(table["states"].as_array().is_some_and(|s| !s.is_empty()));

    let tsv = ok(&["bench", "--grammar", &f("atis.slt"), "--specialized", &spec_s, "--corpus", &f("heldout.txt"), "--repeat", "1"]);
    let mut rows = tsv.lines();
    assert!(rows.next().unwrap().starts_with("index\toriginal_ms\tspecialized_ms"));
    assert!(rows.filter(|l| !l.starts_with('#')).count() > 50);
}

#[test]
fn subcorpus_formats() {
    let tsv = ok(&["subcorpus", "--grammar", &f("atis.slt"), "--corpus", &f("corpus.txt")]);
    let first: Vec<&str> = tsv.lines().next().unwrap().split('\t').collect();
    assert_eq!(first.len(), 2);
    assert!(first[0].parse::<usize>().unwrap() > 1);

    let v = json(&["subcorpus", "--grammar", &f("atis.slt"), "--corpus", &f("corpus.txt"), "--format", "json"]);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len() as u64, v["classes"].as_u64().unwrap());
    let total: u64 = rows.iter().map(|r| r["size"].as_u64().unwrap()).sum();
    assert_eq!(total, v["segments"].as_u64().unwrap());
}

#[test]
fn subcorpus_applies_edits() {
    let before = json(&["subcorpus", "--grammar", &f("atis.slt"), "--corpus", &f("corpus.txt"), "--format", "json"]);
    let top = before["rows"][0]["class"].as_str().unwrap().to_string();
    let second = before["rows"][1]["class"].as_str().unwrap().to_string();
    let dir = tempfile::tempdir().unwrap();
    let edits = dir.path().join("edits.json");
    std::fs::write(&edits, format!(r#"[{{"op":"merge","classes":["{top}","{second}"]}}]"#)).unwrap();
    let after = json(&[
        "subcorpus",
        "--grammar",
        &f("atis.slt"),
        "--corpus",
        &f("corpus.txt"),
        "--format",
        "json",
        "--edits",
        &edits.to_string_lossy(),
    ]);
    assert_eq!(after["segments"], before["segments"]);
    let size = |v: &Value, i: usize| v["rows"][i]["size"].as_u64().unwrap();
    assert_eq!(size(&after, 0), size(&before, 0) + size(&before, 1));
}

#[test]
fn failures_exit_nonzero() {
    let out = slt(&["parse", "--grammar", "/nonexistent/g.slt", "--text", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = slt(&["parse", "--grammar", &f("atis.slt")]);
    assert!(!out.status.success());

    let out = slt(&["translate", "--grammar", &f("atis.slt"), "--text", "x", "--time-limit", "0"]);
    assert!(!out.status.success());

    let out = slt(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn closed_stdout_is_not_an_error() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_slt"))
        .args(["subcorpus", "--grammar", &f("atis.slt"), "--corpus", &f("corpus.txt"), "--format", "json"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
