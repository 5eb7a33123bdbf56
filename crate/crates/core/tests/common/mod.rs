#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use serde_json::Value;
use slt_core::chart::Constituent;
use slt_core::ebl::{specialize, CutCriteria, SpecializedGrammar};
use slt_core::grammar::{load_grammar, Grammar};
use slt_core::pipeline::{treebank_derivations, treebank_id};
use slt_core::treebanker::{read_treebank, TreebankEntry};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn grammar() -> Grammar {
    load_grammar(&read_fixture("atis.slt")).expect("fixture grammar loads")
}

pub fn treebank() -> Vec<TreebankEntry> {
    read_treebank(&read_fixture("treebank.jsonl")).expect("fixture treebank")
}

pub fn derivations(g: &Grammar, entries: &[TreebankEntry]) -> Vec<(u64, Arc<Constituent>)> {
    let (good, bad) = treebank_derivations(entries, g, "UNK");
    assert!(bad.is_empty(), "unbuildable treebank entries: {bad:?}");
    good
}

pub fn specialized(g: &Grammar) -> SpecializedGrammar {
    let tb = treebank();
    specialize(&derivations(g, &tb), g, &treebank_id(&tb), &CutCriteria::cuts(&["NP"])).expect("specializes")
}

pub fn lines(name: &str) -> Vec<String> {
    read_fixture(name)
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// (source, reference, needs reordering)
pub fn bilingual() -> Vec<(String, String, bool)> {
    lines("bilingual_test.tsv")
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string(), f[2] == "1")
        })
        .collect()
}

/// A `slt serve` child process on an ephemeral port.
pub struct Server {
    pub child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(data_dir: &Path, extra: &[&str]) -> Server {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_slt"));
        cmd.arg("serve")
            .arg("--listen")
            .arg("127.0.0.1:0")
            .arg("--data-dir")
            .arg(data_dir)
            .arg("--grammar")
            .arg(fixture("atis.slt"))
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        let mut child = cmd.spawn().expect("spawn slt serve");
        let mut out = BufReader::new(child.stdout.take().expect("stdout"));
        let mut line = String::new();
        loop {
            line.clear();
            if out.read_line(&mut line).expect("read stdout") == 0 {
                let _ = child.kill();
                panic!("server exited before listening");
            }
            if let Some(a) = line.trim().strip_prefix("listening on ") {
                let addr = a.to_string();
                // keep draining so the child never blocks on a full pipe
                std::thread::spawn(move || {
                    let mut sink = String::new();
                    let _ = out.read_to_string(&mut sink);
                });
                return Server { child, addr };
            }
        }
    }

    pub fn kill(mut self) {
        self.child.kill().expect("kill");
        self.child.wait().expect("wait");
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        http(&self.addr, "GET", path, None)
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let (s, b) = http(&self.addr, "POST", path, Some(&body.to_string()));
        (s, serde_json::from_str(&b).unwrap_or(Value::Null))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 exchange with `Connection: close`.
pub fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    try_http(addr, method, path, body).unwrap_or_else(|e| panic!("{method} {path}: {e}"))
}

pub fn try_http(addr: &str, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut s = TcpStream::connect(addr)?;
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = Vec::new();
    s.read_to_end(&mut raw)?;
    let text = String::from_utf8_lossy(&raw).to_string();
    let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated response");
    let (head, rest) = text.split_once("\r\n\r\n").ok_or_else(bad)?;
    let status: u16 = head.split_whitespace().nth(1).and_then(|c| c.parse().ok()).ok_or_else(bad)?;
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    Ok((status, if chunked { dechunk(rest) } else { rest.to_string() }))
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let Some((size, rest)) = s.split_once("\r\n") else { break };
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
    out
}
