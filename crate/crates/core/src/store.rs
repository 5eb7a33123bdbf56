//! Annotation state with an append-only journal.
//!
//! Every mutation is one JSON line carrying the schema version, sequence
//! number, sentence id, request id and timestamp. The line is flushed and
//! synced before the mutation is acknowledged. Snapshots hold the compacted
//! state up to a sequence number; recovery loads the latest snapshot and
//! replays the journal records after it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chart::analyses_of;
use crate::chart::Engine;
use crate::corpus::{ClassStore, CorpusError, Edit};
use crate::grammar::Grammar;
use crate::treebanker::{
    build_incidence, fixture_matrix, IncidenceMatrix, ResolveMode, Session, SessionState, Status, TreebankEntry,
    TreebankError, Verdict, FIXTURE_SENTENCE_ID, FIXTURE_TEXT,
};

pub const SCHEMA_VERSION: u32 = 1;
const JOURNAL: &str = "journal.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown sentence {0}")]
    UnknownSentence(u64),
    #[error("sentence {0} already exists")]
    DuplicateSentence(u64),
    #[error("sentence {sentence} is at version {current}, request expected {expected}")]
    StaleVersion { sentence: u64, expected: u64, current: u64 },
    #[error("{0}")]
    Treebank(#[from] TreebankError),
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("sentence has no analyses: {0}")]
    NoParse(String),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("schema version {0} is not supported")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    /// Whether the error reflects a state conflict rather than bad input.
    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            StoreError::StaleVersion { .. }
                | StoreError::DuplicateSentence(_)
                | StoreError::Treebank(
                    TreebankError::AlreadyDecided(_) | TreebankError::AlreadyResolved | TreebankError::Contradiction
                )
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    AddSentence { id: u64, text: String },
    Judge { discriminant: String, verdict: Verdict },
    Undo,
    Resolve { mode: ResolveMode },
    ClassEdits { edits: Vec<Edit> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub v: u32,
    pub seq: u64,
    pub sentence: Option<u64>,
    pub request_id: Option<String>,
    pub timestamp: u64,
    pub op: Op,
}

pub struct SentenceEntry {
    pub id: u64,
    pub text: String,
    pub session: Session,
    /// Mutations applied to this sentence so far.
    pub version: u64,
}

impl SentenceEntry {
    pub fn state(&self) -> SessionState {
        self.session.state()
    }

    pub fn summary(&self) -> Value {
        json!({
            "id": self.id,
            "text": self.text,
            "status": self.session.status(),
            "analyses": self.session.matrix().analysis_count(),
            "remaining": self.session.remaining_count(),
            "version": self.version,
        })
    }

    pub fn discriminants(&self) -> Value {
        let s = &self.session;
        let m = s.matrix();
        let rows: Vec<Value> = m
            .presentable()
            .iter()
            .map(|&d| {
                let disc = &m.discriminants[d];
                let (verdict, source) = match s.verdict(d) {
                    Some((v, src)) => (json!(v), json!(src)),
                    None => (Value::Null, Value::Null),
                };
                json!({
                    "key": disc.key,
                    "kind": disc.kind,
                    "span": m.span(d),
                    "holds_in": m.incidence(d).len(),
                    "verdict": verdict,
                    "source": source,
                })
            })
            .collect();
        json!({
            "id": self.id,
            "text": self.text,
            "analyses": m.analysis_count(),
            "remaining": s.remaining_count(),
            "status": s.status(),
            "version": self.version,
            "discriminants": rows,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceSnapshot {
    id: u64,
    text: String,
    version: u64,
    /// User judgments in order, with their timestamps.
    judgments: Vec<(String, Verdict, u64)>,
    resolved: bool,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    v: u32,
    seq: u64,
    sentences: Vec<SentenceSnapshot>,
    classes: ClassStore,
    responses: Vec<(String, Value)>,
}

/// Sessions, corpus classes and the journal behind them.
pub struct Workbench {
    grammar: Arc<Grammar>,
    sentences: BTreeMap<u64, SentenceEntry>,
    classes: ClassStore,
    responses: HashMap<String, Value>,
    response_order: Vec<String>,
    seq: u64,
    dir: Option<PathBuf>,
    journal: Option<File>,
    snapshot_every: u64,
    since_snapshot: u64,
}

fn fixture_session() -> Session {
    Session::new(Arc::new(fixture_matrix()))
}

impl Workbench {
    /// In-memory workbench, optionally holding the synthetic fixture
    /// sentence.
    pub fn new(grammar: Arc<Grammar>, classes: ClassStore, with_fixture: bool) -> Self {
        let mut sentences = BTreeMap::new();
        if with_fixture {
            sentences.insert(
                FIXTURE_SENTENCE_ID,
                SentenceEntry {
                    id: FIXTURE_SENTENCE_ID,
                    text: FIXTURE_TEXT.to_string(),
                    session: fixture_session(),
                    version: 0,
                },
            );
        }
        Workbench {
            grammar,
            sentences,
            classes,
            responses: HashMap::new(),
            response_order: Vec::new(),
            seq: 0,
            dir: None,
            journal: None,
            snapshot_every: 0,
            since_snapshot: 0,
        }
    }

    /// Recovers state from `dir` (snapshot plus journal tail) and keeps
    /// journaling there. A torn final journal line is dropped.
    pub fn open(
        dir: &Path,
        grammar: Arc<Grammar>,
        classes: ClassStore,
        with_fixture: bool,
        snapshot_every: u64,
    ) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        let mut wb = Workbench::new(grammar, classes, with_fixture);
        let snap_path = dir.join(SNAPSHOT);
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_str(&fs::read_to_string(&snap_path)?).map_err(|e| StoreError::Corrupt {
                line: 0,
                message: e.to_string(),
            })?;
            if snap.v != SCHEMA_VERSION {
                return Err(StoreError::Version(snap.v));
            }
            wb.restore(snap)?;
        }
        let path = dir.join(JOURNAL);
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let mut lines = reader.split(b'\n').enumerate().peekable();
            while let Some((i, line)) = lines.next() {
                let line = line?;
                let last = lines.peek().is_none();
                let rec: Record = match serde_json::from_slice(&line) {
                    Ok(r) => r,
                    Err(_) if last => break,
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                };
                valid_len += line.len() as u64 + 1;
                if rec.v != SCHEMA_VERSION {
                    return Err(StoreError::Version(rec.v));
                }
                if rec.seq <= wb.seq {
                    continue;
                }
                let resp = wb.apply(&rec).map_err(|e| StoreError::Corrupt {
                    line: i + 1,
                    message: format!("replay failed: {e}"),
                })?;
                wb.seq = rec.seq;
                wb.remember(rec.request_id.as_deref(), &resp);
            }
        }
        let journal = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        if journal.metadata()?.len() > valid_len {
            journal.set_len(valid_len)?;
        }
        wb.journal = Some(journal);
        wb.dir = Some(dir.to_path_buf());
        wb.snapshot_every = snapshot_every;
        Ok(wb)
    }

    fn restore(&mut self, snap: Snapshot) -> Result<(), StoreError> {
        self.classes = snap.classes;
        for s in snap.sentences {
            let mut session = if s.id == FIXTURE_SENTENCE_ID && s.text == FIXTURE_TEXT {
                fixture_session()
            } else {
                self.session_for(&s.text)?
            };
            for (d, v, ts) in &s.judgments {
                session.judge(d, *v, *ts)?;
            }
            if s.resolved {
                session.resolve(ResolveMode::AcceptSet)?;
            }
            self.sentences.insert(
                s.id,
                SentenceEntry {
                    id: s.id,
                    text: s.text,
                    session,
                    version: s.version,
                },
            );
        }
        for (k, v) in snap.responses {
            self.remember(Some(&k), &v);
        }
        self.seq = snap.seq;
        Ok(())
    }

    fn session_for(&self, text: &str) -> Result<Session, StoreError> {
        let analyses =
            analyses_of(text, &self.grammar, None, Engine::Chart).map_err(|e| StoreError::NoParse(e.to_string()))?;
        if analyses.is_empty() {
            return Err(StoreError::NoParse(text.to_string()));
        }
        let m: IncidenceMatrix = build_incidence(&analyses, &self.grammar)?;
        Ok(Session::new(Arc::new(m)))
    }

    fn remember(&mut self, request_id: Option<&str>, resp: &Value) {
        if let Some(r) = request_id {
            if self.responses.insert(r.to_string(), resp.clone()).is_none() {
                self.response_order.push(r.to_string());
            }
        }
    }

    fn sentence_mut(&mut self, id: u64) -> Result<&mut SentenceEntry, StoreError> {
        self.sentences.get_mut(&id).ok_or(StoreError::UnknownSentence(id))
    }

    /// Applies a record to memory only.
    fn apply(&mut self, rec: &Record) -> Result<Value, StoreError> {
        match &rec.op {
            Op::AddSentence { id, text } => {
                if self.sentences.contains_key(id) {
                    return Err(StoreError::DuplicateSentence(*id));
                }
                let session = self.session_for(text)?;
                let entry = SentenceEntry {
                    id: *id,
                    text: text.clone(),
                    session,
                    version: 0,
                };
                let out = entry.summary();
                self.sentences.insert(*id, entry);
                Ok(out)
            }
            Op::Judge { discriminant, verdict } => {
                let s = self.sentence_mut(rec.sentence.unwrap_or(u64::MAX))?;
                let out = s.session.judge(discriminant, *verdict, rec.timestamp)?;
                s.version += 1;
                Ok(json!({
                    "remaining": out.remaining,
                    "propagated": out.propagated,
                    "status": out.status,
                    "version": s.version,
                }))
            }
            Op::Undo => {
                let s = self.sentence_mut(rec.sentence.unwrap_or(u64::MAX))?;
                s.session.undo()?;
                s.version += 1;
                Ok(json!({"remaining": s.session.remaining_count(), "status": s.session.status(), "version": s.version}))
            }
            Op::Resolve { mode } => {
                let s = self.sentence_mut(rec.sentence.unwrap_or(u64::MAX))?;
                let approved = s.session.resolve(*mode)?;
                s.version += 1;
                let labels: Vec<&String> = approved.iter().map(|&a| &s.session.matrix().analyses[a]).collect();
                Ok(json!({"approved": labels, "status": s.session.status(), "version": s.version}))
            }
            Op::ClassEdits { edits } => {
                self.classes.regroup(edits)?;
                Ok(json!({"classes": self.classes.classes.len()}))
            }
        }
    }

    /// Applies a mutation and journals it before returning. A request id
    /// seen before returns the first response without reapplying.
    pub fn execute(
        &mut self,
        sentence: Option<u64>,
        op: Op,
        request_id: Option<String>,
        timestamp: u64,
        expected_version: Option<u64>,
    ) -> Result<Value, StoreError> {
        if let Some(prev) = request_id.as_ref().and_then(|r| self.responses.get(r)) {
            return Ok(prev.clone());
        }
        if let (Some(id), Some(expected)) = (sentence, expected_version) {
            let current = self.sentences.get(&id).ok_or(StoreError::UnknownSentence(id))?.version;
            if current != expected {
                return Err(StoreError::StaleVersion {
                    sentence: id,
                    expected,
                    current,
                });
            }
        }
        let rec = Record {
            v: SCHEMA_VERSION,
            seq: self.seq + 1,
            sentence,
            request_id,
            timestamp,
            op,
        };
        let resp = self.apply(&rec)?;
        if let Some(j) = self.journal.as_mut() {
            let mut line = serde_json::to_vec(&rec).expect("record serializes");
            line.push(b'\n');
            j.write_all(&line)?;
            j.sync_data()?;
        }
        self.seq = rec.seq;
        self.remember(rec.request_id.as_deref(), &resp);
        self.since_snapshot += 1;
        if self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(resp)
    }

    /// Writes the compacted state atomically.
    pub fn snapshot(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.dir.clone() else { return Ok(()) };
        let snap = Snapshot {
            v: SCHEMA_VERSION,
            seq: self.seq,
            sentences: self
                .sentences
                .values()
                .map(|s| SentenceSnapshot {
                    id: s.id,
                    text: s.text.clone(),
                    version: s.version,
                    judgments: s
                        .session
                        .judgments()
                        .iter()
                        .filter(|j| j.source == crate::treebanker::Source::User)
                        .map(|j| (j.discriminant.clone(), j.verdict, j.timestamp))
                        .collect(),
                    resolved: s.session.approved().is_some(),
                })
                .collect(),
            classes: self.classes.clone(),
            responses: self
                .response_order
                .iter()
                .map(|k| (k.clone(), self.responses[k].clone()))
                .collect(),
        };
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(serde_json::to_string(&snap).expect("snapshot serializes").as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn sentence(&self, id: u64) -> Option<&SentenceEntry> {
        self.sentences.get(&id)
    }

    pub fn sentences(&self) -> impl Iterator<Item = &SentenceEntry> {
        self.sentences.values()
    }

    pub fn next_sentence_id(&self) -> u64 {
        self.sentences.keys().next_back().map_or(1, |k| k + 1)
    }

    pub fn classes(&self) -> &ClassStore {
        &self.classes
    }

    /// Treebank records of every resolved sentence.
    pub fn export(&self) -> Vec<TreebankEntry> {
        self.sentences
            .values()
            .filter_map(|s| TreebankEntry::from_session(s.id, &s.text, &s.session))
            .collect()
    }

    /// Full observable state, used to compare a recovered store with the
    /// original.
    pub fn dump(&self) -> Value {
        let sentences: Vec<Value> = self
            .sentences
            .values()
            .map(|s| json!({"id": s.id, "text": s.text, "version": s.version, "state": s.state()}))
            .collect();
        json!({"seq": self.seq, "sentences": sentences, "classes": self.classes})
    }

    pub fn status_filter(status: &str) -> Option<Vec<Status>> {
        match status {
            "open" => Some(vec![Status::Open]),
            "resolved" => Some(vec![Status::ResolvedUnique, Status::ResolvedSet]),
            "resolved-unique" => Some(vec![Status::ResolvedUnique]),
            "resolved-set" => Some(vec![Status::ResolvedSet]),
            "contradiction" => Some(vec![Status::Contradiction]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::load_grammar;
    use crate::treebanker::{FIXTURE_FIRST, FIXTURE_SECOND};

    fn grammar() -> Arc<Grammar> {
        Arc::new(
            load_grammar(
                "categories: S NP VP Noun Verb\ntags: NN VB\nstart: S\n\
                 rule np: NP -> Noun phrasal\nrule vp: VP -> Verb phrasal\nrule s: S -> NP VP level=2\n\
                 lex \"dogs\": Noun tag=NN\nlex \"bark\": Verb tag=VB\n",
            )
                .unwrap(),
        )
    }

    fn empty_classes() -> ClassStore {
        crate::corpus::group_by_tagsequence(Vec::new())
    }

    fn judge(wb: &mut Workbench, d: &str, rid: &str) -> Result<Value, StoreError> {
        wb.execute(
            Some(FIXTURE_SENTENCE_ID),
            Op::Judge {
                discriminant: d.into(),
                verdict: Verdict::Correct,
            },
            Some(rid.into()),
            7,
            None,
        )
    }

    #[test]
    fn replay_matches_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let dump = {
            let mut wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 0).unwrap();
            assert_eq!(judge(&mut wb, FIXTURE_FIRST, "r1").unwrap()["remaining"], 20);
            judge(&mut wb, FIXTURE_SECOND, "r2").unwrap();
            wb.dump()
        };
        let wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 0).unwrap();
        assert_eq!(wb.dump(), dump);
    }

    #[test]
    fn request_ids_are_at_most_once() {
        let mut wb = Workbench::new(grammar(), empty_classes(), true);
        let a = judge(&mut wb, FIXTURE_FIRST, "r1").unwrap();
        let b = judge(&mut wb, FIXTURE_FIRST, "r1").unwrap();
        assert_eq!(a, b);
        assert_eq!(wb.seq(), 1);
        let err = judge(&mut wb, FIXTURE_FIRST, "r9").unwrap_err();
        assert!(err.is_conflict());
    }

    #[test]
    fn snapshot_then_tail() {
        let dir = tempfile::tempdir().unwrap();
        let dump = {
            let mut wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 1).unwrap();
            judge(&mut wb, FIXTURE_FIRST, "r1").unwrap();
            wb.execute(
                None,
                Op::AddSentence {
                    id: 1,
                    text: "dogs bark".into(),
                },
                None,
                8,
                None,
            )
            .unwrap();
            wb.dump()
        };
        let wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 1).unwrap();
        assert_eq!(wb.dump(), dump);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 0).unwrap();
            judge(&mut wb, FIXTURE_FIRST, "r1").unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(JOURNAL)).unwrap();
        f.write_all(b"{\"v\":1,\"seq\":2,").unwrap();
        drop(f);
        let mut wb = Workbench::open(dir.path(), grammar(), empty_classes(), true, 0).unwrap();
        assert_eq!(wb.seq(), 1);
        judge(&mut wb, FIXTURE_SECOND, "r2").unwrap();
        let wb2 = Workbench::open(dir.path(), grammar(), empty_classes(), true, 0).unwrap();
        assert_eq!(wb2.dump(), wb.dump());
    }

    #[test]
    fn stale_version_conflicts() {
        let mut wb = Workbench::new(grammar(), empty_classes(), true);
        let err = wb
            .execute(Some(FIXTURE_SENTENCE_ID), Op::Undo, None, 0, Some(3))
            .unwrap_err();
        assert!(err.is_conflict());
    }
}
