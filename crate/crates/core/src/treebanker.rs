//! Discriminant database and judgment propagation for one sentence's
//! analyses.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{Constituent, Derivation};
use crate::grammar::Grammar;
use crate::pruner::{constituent_key, Discriminant, DiscriminantKind, Friendliness};
use crate::semantics::PaTree;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TreebankError {
    #[error("no analyses")]
    NoAnalyses,
    #[error("unknown discriminant `{0}`")]
    UnknownDiscriminant(String),
    #[error("discriminant `{0}` is already decided")]
    AlreadyDecided(String),
    #[error("judgments are contradictory; undo first")]
    Contradiction,
    #[error("sentence is unresolved ({0} analyses remain)")]
    Unresolved(usize),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("already resolved")]
    AlreadyResolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    User,
    Propagated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Open,
    ResolvedUnique,
    ResolvedSet,
    Contradiction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolveMode {
    UniqueRequired,
    AcceptSet,
}

/// Which discriminants hold in which analyses.
#[derive(Clone, Debug)]
pub struct IncidenceMatrix {
    /// Analysis labels (derivation signatures for real sentences).
    pub analyses: Vec<String>,
    pub discriminants: Vec<Discriminant>,
    /// Words covered, for presentation order.
    spans: Vec<usize>,
    holds: Vec<FixedBitSet>,
    index: BTreeMap<String, usize>,
    presentable: Vec<usize>,
}

impl IncidenceMatrix {
    /// `holds[d]` lists the analyses discriminant `d` holds in.
    pub fn from_parts(analyses: Vec<String>, discriminants: Vec<(Discriminant, usize, Vec<usize>)>) -> Self {
        let n = analyses.len();
        let mut ds = Vec::new();
        let mut spans = Vec::new();
        let mut holds = Vec::new();
        let mut index = BTreeMap::new();
        for (d, span, set) in discriminants {
            if let Some(&i) = index.get(&d.key) {
                let b: &mut FixedBitSet = &mut holds[i];
                b.extend(set);
                continue;
            }
            let mut b = FixedBitSet::with_capacity(n);
            b.extend(set);
            index.insert(d.key.clone(), ds.len());
            ds.push(d);
            spans.push(span);
            holds.push(b);
        }
        let mut presentable: Vec<usize> = (0..ds.len())
            .filter(|&i| {
                let c = holds[i].count_ones(..);
                ds[i].friendliness != Friendliness::System && c > 0 && c < n
            })
            .collect();
        presentable.sort_by(|&a, &b| {
            let fa = ds[a].friendliness != Friendliness::User;
            let fb = ds[b].friendliness != Friendliness::User;
            fa.cmp(&fb)
                .then(spans[b].cmp(&spans[a]))
                .then(ds[a].kind.cmp(&ds[b].kind))
                .then(ds[a].key.cmp(&ds[b].key))
        });
        IncidenceMatrix {
            analyses,
            discriminants: ds,
            spans,
            holds,
            index,
            presentable,
        }
    }

    pub fn analysis_count(&self) -> usize {
        self.analyses.len()
    }

    pub fn find(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Discriminant indices that can be judged, in presentation order.
    pub fn presentable(&self) -> &[usize] {
        &self.presentable
    }

    pub fn is_presentable(&self, d: usize) -> bool {
        self.presentable.contains(&d)
    }

    pub fn holds(&self, d: usize, analysis: usize) -> bool {
        self.holds[d].contains(analysis)
    }

    pub fn incidence(&self, d: usize) -> Vec<usize> {
        self.holds[d].ones().collect()
    }

    pub fn span(&self, d: usize) -> usize {
        self.spans[d]
    }
}

/// Constituent, triple and mood discriminants of every analysis.
pub fn build_incidence(analyses: &[Arc<Constituent>], grammar: &Grammar) -> Result<IncidenceMatrix, TreebankError> {
    if analyses.is_empty() {
        return Err(TreebankError::NoAnalyses);
    }
    let mut found: BTreeMap<Discriminant, (usize, BTreeSet<usize>)> = BTreeMap::new();
    for (a, root) in analyses.iter().enumerate() {
        let mut add = |d: Discriminant, span: usize| {
            let e = found.entry(d).or_insert((span, BTreeSet::new()));
            e.0 = e.0.max(span);
            e.1.insert(a);
        };
        for n in root.subtree() {
            if n.level >= 2 {
                add(Discriminant::new(DiscriminantKind::Constituent, constituent_key(n)), n.to - n.from);
            }
        }
        for t in PaTree::from_constituent(root, grammar).triples() {
            add(Discriminant::new(DiscriminantKind::Triple, t), 0);
        }
        if let Derivation::Rule { rule, .. } = &root.derivation {
            add(Discriminant::new(DiscriminantKind::Mood, format!("mood:{rule}")), 0);
        }
    }
    let labels = analyses.iter().map(|c| c.signature()).collect();
    Ok(IncidenceMatrix::from_parts(
        labels,
        found.into_iter().map(|(d, (s, set))| (d, s, set.into_iter().collect())).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub discriminant: String,
    pub verdict: Verdict,
    pub source: Source,
    /// Client timestamp (ms) of the user judgment this one stems from.
    pub timestamp: u64,
}

/// One sentence's annotation session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub remaining: Vec<usize>,
    pub judgments: Vec<Judgment>,
    pub status: Status,
    pub approved: Option<Vec<usize>>,
}

/// Result of one user judgment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JudgmentOutcome {
    pub remaining: usize,
    pub propagated: Vec<Judgment>,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct Session {
    matrix: Arc<IncidenceMatrix>,
    remaining: FixedBitSet,
    decided: BTreeMap<usize, (Verdict, Source)>,
    judgments: Vec<Judgment>,
    approved: Option<Vec<usize>>,
}

impl Session {
    pub fn new(matrix: Arc<IncidenceMatrix>) -> Self {
        let n = matrix.analysis_count();
        let mut remaining = FixedBitSet::with_capacity(n);
        remaining.insert_range(..);
        Session {
            matrix,
            remaining,
            decided: BTreeMap::new(),
            judgments: Vec::new(),
            approved: None,
        }
    }

    pub fn matrix(&self) -> &IncidenceMatrix {
        &self.matrix
    }

    pub fn remaining(&self) -> Vec<usize> {
        self.remaining.ones().collect()
    }

    pub fn remaining_count(&self) -> usize {
        self.remaining.count_ones(..)
    }

    pub fn verdict(&self, d: usize) -> Option<(Verdict, Source)> {
        self.decided.get(&d).copied()
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn approved(&self) -> Option<&[usize]> {
        self.approved.as_deref()
    }

    pub fn status(&self) -> Status {
        let n = self.remaining_count();
        if n == 0 {
            return Status::Contradiction;
        }
        let open = self
            .matrix
            .presentable()
            .iter()
            .any(|d| !self.decided.contains_key(d));
        match (open, n) {
            (true, _) => Status::Open,
            (false, 1) => Status::ResolvedUnique,
            (false, _) => Status::ResolvedSet,
        }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            remaining: self.remaining(),
            judgments: self.judgments.clone(),
            status: self.status(),
            approved: self.approved.clone(),
        }
    }

    /// Applies a user judgment, then marks every undecided discriminant
    /// that now holds in all (or none) of the remaining analyses.
    pub fn judge(&mut self, key: &str, verdict: Verdict, timestamp: u64) -> Result<JudgmentOutcome, TreebankError> {
        if self.approved.is_some() {
            return Err(TreebankError::AlreadyResolved);
        }
        let d = self
            .matrix
            .find(key)
            .filter(|&d| self.matrix.is_presentable(d))
            .ok_or_else(|| TreebankError::UnknownDiscriminant(key.to_string()))?;
        if let Some((_, Source::User)) = self.decided.get(&d) {
            return Err(TreebankError::AlreadyDecided(key.to_string()));
        }
        let holds = &self.matrix.holds[d];
        match verdict {
            Verdict::Correct => self.remaining.intersect_with(holds),
            Verdict::Incorrect => self.remaining.difference_with(holds),
        }
        self.decided.insert(d, (verdict, Source::User));
        self.judgments.push(Judgment {
            discriminant: key.to_string(),
            verdict,
            source: Source::User,
            timestamp,
        });
        let propagated = self.propagate(timestamp);
        Ok(JudgmentOutcome {
            remaining: self.remaining_count(),
            propagated,
            status: self.status(),
        })
    }

    fn propagate(&mut self, timestamp: u64) -> Vec<Judgment> {
        let mut out = Vec::new();
        if self.remaining.is_clear() {
            return out;
        }
        for &d in self.matrix.presentable() {
            if self.decided.contains_key(&d) {
                continue;
            }
            let holds = &self.matrix.holds[d];
            let verdict = if self.remaining.is_subset(holds) {
                Verdict::Correct
            } else if self.remaining.is_disjoint(holds) {
                Verdict::Incorrect
            } else {
                continue;
            };
            self.decided.insert(d, (verdict, Source::Propagated));
            let j = Judgment {
                discriminant: self.matrix.discriminants[d].key.clone(),
                verdict,
                source: Source::Propagated,
                timestamp,
            };
            self.judgments.push(j.clone());
            out.push(j);
        }
        out
    }

    /// Drops the last user judgment (and everything after it) and replays
    /// the rest.
    pub fn undo(&mut self) -> Result<(), TreebankError> {
        if self.approved.is_some() {
            return Err(TreebankError::AlreadyResolved);
        }
        let last = self
            .judgments
            .iter()
            .rposition(|j| j.source == Source::User)
            .ok_or(TreebankError::NothingToUndo)?;
        let keep: Vec<Judgment> = self.judgments[..last]
            .iter()
            .filter(|j| j.source == Source::User)
            .cloned()
            .collect();
        *self = Session::new(self.matrix.clone());
        for j in keep {
            self.judge(&j.discriminant, j.verdict, j.timestamp)
                .expect("replaying a prefix of accepted judgments");
        }
        Ok(())
    }

    /// Approves the remaining analyses.
    pub fn resolve(&mut self, mode: ResolveMode) -> Result<Vec<usize>, TreebankError> {
        if self.approved.is_some() {
            return Err(TreebankError::AlreadyResolved);
        }
        let n = self.remaining_count();
        if n == 0 {
            return Err(TreebankError::Contradiction);
        }
        if mode == ResolveMode::UniqueRequired && n != 1 {
            return Err(TreebankError::Unresolved(n));
        }
        let approved = self.remaining();
        self.approved = Some(approved.clone());
        Ok(approved)
    }
}

/// Exported supervision for one resolved sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreebankEntry {
    pub id: u64,
    pub text: String,
    /// Approved derivation signatures.
    pub approved: Vec<String>,
    /// Every decided discriminant.
    #[serde(default)]
    pub verdicts: Vec<(String, Verdict)>,
}

impl TreebankEntry {
    pub fn from_session(id: u64, text: &str, s: &Session) -> Option<TreebankEntry> {
        let approved = s.approved()?;
        let m = s.matrix();
        Some(TreebankEntry {
            id,
            text: text.to_string(),
            approved: approved.iter().map(|&a| m.analyses[a].clone()).collect(),
            verdicts: s
                .decided
                .iter()
                .map(|(&d, &(v, _))| (m.discriminants[d].key.clone(), v))
                .collect(),
        })
    }
}

pub fn read_treebank(text: &str) -> Result<Vec<TreebankEntry>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_treebank(entries: &[TreebankEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}

pub const FIXTURE_SENTENCE_ID: u64 = 42;
pub const FIXTURE_TEXT: &str =
    "show me the flights to boston that has no stops from washington to san francisco on friday";
pub const FIXTURE_FIRST: &str = "NP:the flights to boston";
pub const FIXTURE_SECOND: &str = "RelS:that has no stops";

/// Synthetic 154-analysis, 318-discriminant matrix in which judging
/// [`FIXTURE_FIRST`] correct leaves 20 analyses and then judging
/// [`FIXTURE_SECOND`] correct leaves 2 that no discriminant separates.
pub fn fixture_matrix() -> IncidenceMatrix {
    const ANALYSES: usize = 154;
    const DISCRIMINANTS: usize = 318;
    let mut rng = ChaCha8Rng::seed_from_u64(154_318);
    let labels = (0..ANALYSES).map(|a| format!("a{a:03}")).collect();
    let mut ds = vec![
        (
            Discriminant::new(DiscriminantKind::Constituent, FIXTURE_FIRST.into()),
            4,
            (0..20).collect::<Vec<usize>>(),
        ),
        (
            Discriminant::new(DiscriminantKind::Constituent, FIXTURE_SECOND.into()),
            4,
            (0..2).chain(20..60).collect(),
        ),
    ];
    let cats = ["NP", "PP", "VP", "RelS", "Nbar"];
    let mut seen = BTreeSet::new();
    while ds.len() < DISCRIMINANTS {
        // analyses 0 and 1 always agree
        let mut set: Vec<usize> = (1..ANALYSES).filter(|_| rng.gen_bool(0.4)).collect();
        if set.first() == Some(&1) {
            set.insert(0, 0);
        }
        let n = set.len();
        if n == 0 || n == ANALYSES || !seen.insert(set.clone()) {
            continue;
        }
        let key = match ds.len() % 3 {
            0 => format!("{}:span{}", cats[ds.len() % cats.len()], ds.len()),
            1 => format!("w{}+mod+w{}", ds.len(), rng.gen_range(0..100)),
            _ => format!("pp{}+to+w{}", ds.len(), rng.gen_range(0..100)),
        };
        let kind = if ds.len() % 3 == 0 {
            DiscriminantKind::Constituent
        } else {
            DiscriminantKind::Triple
        };
        let span = rng.gen_range(1..6);
        ds.push((Discriminant::new(kind, key), span, set));
    }
    ds.shuffle(&mut rng);
    IncidenceMatrix::from_parts(labels, ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, sets: &[&[usize]]) -> IncidenceMatrix {
        IncidenceMatrix::from_parts(
            (0..n).map(|a| format!("a{a}")).collect(),
            sets.iter()
                .enumerate()
                .map(|(i, s)| (Discriminant::new(DiscriminantKind::Constituent, format!("d{i}")), 1, s.to_vec()))
                .collect(),
        )
    }

    #[test]
    fn correct_intersects() {
        let m = Arc::new(matrix(3, &[&[0, 1], &[2], &[0]]));
        let mut s = Session::new(m);
        let out = s.judge("d0", Verdict::Correct, 0).unwrap();
        assert_eq!(s.remaining(), vec![0, 1]);
        assert_eq!(out.remaining, 2);
        // d1 = {2} is disjoint from the rest now
        assert!(out
            .propagated
            .iter()
            .any(|j| j.discriminant == "d1" && j.verdict == Verdict::Incorrect));
        assert_eq!(s.status(), Status::Open);
    }

    #[test]
    fn single_analysis_is_resolved() {
        let s = Session::new(Arc::new(matrix(1, &[&[0]])));
        assert!(s.matrix().presentable().is_empty());
        assert_eq!(s.status(), Status::ResolvedUnique);
    }

    #[test]
    fn contradiction_and_undo() {
        let m = Arc::new(matrix(3, &[&[0], &[1], &[0, 1]]));
        let mut s = Session::new(m);
        s.judge("d2", Verdict::Correct, 0).unwrap();
        s.judge("d0", Verdict::Incorrect, 0).unwrap();
        assert_eq!(s.status(), Status::ResolvedUnique);
        s.undo().unwrap();
        let out = s.judge("d1", Verdict::Incorrect, 0).unwrap();
        assert_eq!(out.status, Status::ResolvedUnique);
        s.undo().unwrap();
        s.undo().unwrap();
        assert_eq!(s.remaining_count(), 3);
        assert_eq!(s.undo(), Err(TreebankError::NothingToUndo));
        s.judge("d0", Verdict::Correct, 0).unwrap();
        assert!(matches!(s.judge("d0", Verdict::Correct, 0), Err(TreebankError::AlreadyDecided(_))));
        let m = Arc::new(matrix(3, &[&[0, 1], &[1, 2]]));
        let mut s = Session::new(m);
        s.judge("d0", Verdict::Correct, 0).unwrap();
        s.judge("d1", Verdict::Incorrect, 0).unwrap();
        assert_eq!(s.remaining(), vec![0]);
    }

    #[test]
    fn contradictory_pair_empties_remaining() {
        let m = Arc::new(matrix(4, &[&[0, 1], &[0, 2], &[1, 3]]));
        let mut s = Session::new(m);
        s.judge("d1", Verdict::Correct, 0).unwrap();
        assert_eq!(s.verdict(2), Some((Verdict::Incorrect, Source::Propagated)));
        // overriding a propagated verdict is allowed and contradicts
        let out = s.judge("d2", Verdict::Correct, 0).unwrap();
        assert_eq!(out.status, Status::Contradiction);
        assert_eq!(out.remaining, 0);
        assert_eq!(s.resolve(ResolveMode::AcceptSet), Err(TreebankError::Contradiction));
        assert!(matches!(s.judge("d1", Verdict::Incorrect, 0), Err(TreebankError::AlreadyDecided(_))));
        s.undo().unwrap();
        assert_eq!(s.remaining(), vec![0, 2]);
    }

    #[test]
    fn resolve_modes() {
        let mut s = Session::new(Arc::new(matrix(3, &[&[0, 1]])));
        assert_eq!(s.resolve(ResolveMode::UniqueRequired), Err(TreebankError::Unresolved(3)));
        s.judge("d0", Verdict::Correct, 0).unwrap();
        assert_eq!(s.status(), Status::ResolvedSet);
        assert_eq!(s.resolve(ResolveMode::AcceptSet).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fixture_counts() {
        let m = fixture_matrix();
        assert_eq!(m.analysis_count(), 154);
        assert_eq!(m.discriminants.len(), 318);
        assert_eq!(m.presentable().len(), 318);
        let mut s = Session::new(Arc::new(m));
        assert_eq!(s.judge(FIXTURE_FIRST, Verdict::Correct, 1).unwrap().remaining, 20);
        let out = s.judge(FIXTURE_SECOND, Verdict::Correct, 2).unwrap();
        assert_eq!(out.remaining, 2);
        assert_eq!(out.status, Status::ResolvedSet);
        assert_eq!(s.resolve(ResolveMode::AcceptSet).unwrap().len(), 2);
    }
}
