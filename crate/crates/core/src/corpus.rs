//! Representative subcorpus construction: split, tag, group by tag
//! sequence, regroup by hand, pick representatives, report by class size.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::{Grammar, UNKNOWN_CATEGORY};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentRef),
    #[error("segment {member} is not a member of class {class}")]
    NotAMember { class: ClassId, member: SegmentRef },
    #[error("edit {index}: {source}")]
    Edit { index: usize, source: Box<CorpusError> },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub utterance: usize,
    pub segment: usize,
}

impl fmt::Display for SegmentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}.{}", self.utterance, self.segment)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u64);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl Serialize for ClassId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.strip_prefix('c')
            .and_then(|n| n.parse().ok())
            .map(ClassId)
            .ok_or_else(|| serde::de::Error::custom(format!("bad class id `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: usize,
    pub raw: String,
    pub segments: Vec<Vec<String>>,
    pub tags: Vec<Vec<String>>,
    /// Set when the utterance yields no segments.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub punctuation: Vec<char>,
    pub coordinators: Vec<String>,
    /// Tags counting as verbs for the coordinator rule (prefix match).
    pub verb_tag_prefix: String,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            punctuation: vec!['.', ',', ';', '?', '!', ':'],
            coordinators: vec!["and".into(), "then".into()],
            verb_tag_prefix: "VB".into(),
        }
    }
}

/// Most frequent lexicon tag per word, `UNK` otherwise.
pub fn lexicon_tagger(grammar: &Grammar) -> impl Fn(&str) -> String + '_ {
    move |w| grammar.best_tag(w).unwrap_or(UNKNOWN_CATEGORY).to_string()
}

/// Splits at punctuation, and at a coordinator that separates two clauses
/// which both start with a verb.
pub fn split_utterances(raw: &[String], cfg: &SplitConfig, tagger: &dyn Fn(&str) -> String) -> Vec<Utterance> {
    raw.iter()
        .enumerate()
        .map(|(id, text)| {
            let mut pieces: Vec<Vec<String>> = Vec::new();
            let mut cur = Vec::new();
            for tok in text.split_whitespace() {
                let mut word = String::new();
                for ch in tok.chars() {
                    if cfg.punctuation.contains(&ch) {
                        if !word.is_empty() {
                            cur.push(std::mem::take(&mut word).to_lowercase());
                        }
                        if !cur.is_empty() {
                            pieces.push(std::mem::take(&mut cur));
                        }
                    } else {
                        word.push(ch);
                    }
                }
                if !word.is_empty() {
                    cur.push(word.to_lowercase());
                }
            }
            if !cur.is_empty() {
                pieces.push(cur);
            }
            let is_verb = |w: &str| tagger(w).starts_with(&cfg.verb_tag_prefix);
            let mut segments = Vec::new();
            for piece in pieces {
                let mut start = 0;
                for i in 1..piece.len().saturating_sub(1) {
                    if cfg.coordinators.contains(&piece[i]) && i > start && is_verb(&piece[start]) && is_verb(&piece[i + 1]) {
                        segments.push(piece[start..i].to_vec());
                        start = i + 1;
                    }
                }
                segments.push(piece[start..].to_vec());
            }
            let tags = segments.iter().map(|s| s.iter().map(|w| tagger(w)).collect()).collect();
            Utterance {
                id,
                raw: text.clone(),
                flagged: segments.is_empty(),
                segments,
                tags,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassProvenance {
    Auto,
    ManuallyRegrouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagSequenceClass {
    pub id: ClassId,
    pub tag_sequence: Vec<String>,
    pub members: Vec<SegmentRef>,
    pub representative: Option<SegmentRef>,
    pub provenance: ClassProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Edit {
    Move { member: SegmentRef, to: ClassId },
    /// Moves `members` out of `class` into a new class.
    Split { class: ClassId, members: Vec<SegmentRef> },
    /// Folds the other classes into the first one.
    Merge { classes: Vec<ClassId> },
    Designate { class: ClassId, member: SegmentRef },
}

/// Utterances plus their current partition into classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStore {
    pub utterances: Vec<Utterance>,
    pub classes: Vec<TagSequenceClass>,
    next_id: u64,
}

impl ClassStore {
    pub fn segment_text(&self, r: SegmentRef) -> Option<String> {
        self.utterances
            .get(r.utterance)
            .and_then(|u| u.segments.get(r.segment))
            .map(|s| s.join(" "))
    }

    pub fn segment_count(&self) -> usize {
        self.utterances.iter().map(|u| u.segments.len()).sum()
    }

    pub fn class(&self, id: ClassId) -> Option<&TagSequenceClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    fn class_index(&self, id: ClassId) -> Result<usize, CorpusError> {
        self.classes
            .iter()
            .position(|c| c.id == id)
            .ok_or(CorpusError::UnknownClass(id))
    }

    fn owner(&self, m: SegmentRef) -> Result<usize, CorpusError> {
        self.classes
            .iter()
            .position(|c| c.members.contains(&m))
            .ok_or(CorpusError::UnknownSegment(m))
    }

    /// Every segment in exactly one class and representatives are members.
    pub fn check_partition(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if c.members.is_empty() {
                return Err(format!("class {} is empty", c.id));
            }
            for m in &c.members {
                if self.segment_text(*m).is_none() {
                    return Err(format!("class {} holds unknown segment {m}", c.id));
                }
                if !seen.insert(*m) {
                    return Err(format!("segment {m} is in two classes"));
                }
            }
            if let Some(r) = c.representative {
                if !c.members.contains(&r) {
                    return Err(format!("representative {r} of {} is not a member", c.id));
                }
            }
        }
        if seen.len() != self.segment_count() {
            return Err(format!("{} of {} segments are classified", seen.len(), self.segment_count()));
        }
        Ok(())
    }

    fn apply_one(&mut self, edit: &Edit) -> Result<(), CorpusError> {
        match edit {
            Edit::Move { member, to } => {
                let dst = self.class_index(*to)?;
                let src = self.owner(*member)?;
                if src == dst {
                    return Ok(());
                }
                let s = &mut self.classes[src];
                s.members.retain(|m| m != member);
                if s.representative == Some(*member) {
                    s.representative = None;
                }
                s.provenance = ClassProvenance::ManuallyRegrouped;
                let d = &mut self.classes[dst];
                d.members.push(*member);
                d.provenance = ClassProvenance::ManuallyRegrouped;
            }
            Edit::Split { class, members } => {
                let src = self.class_index(*class)?;
                let c = &self.classes[src];
                if let Some(m) = members.iter().find(|m| !c.members.contains(m)) {
                    return Err(CorpusError::NotAMember { class: *class, member: *m });
                }
                let moved: Vec<SegmentRef> = c.members.iter().filter(|m| members.contains(m)).copied().collect();
                let new = TagSequenceClass {
                    id: ClassId(self.next_id),
                    tag_sequence: c.tag_sequence.clone(),
                    members: moved,
                    representative: c.representative.filter(|r| members.contains(r)),
                    provenance: ClassProvenance::ManuallyRegrouped,
                };
                self.next_id += 1;
                let c = &mut self.classes[src];
                c.members.retain(|m| !members.contains(m));
                if c.representative.is_some_and(|r| members.contains(&r)) {
                    c.representative = None;
                }
                c.provenance = ClassProvenance::ManuallyRegrouped;
                self.classes.push(new);
            }
            Edit::Merge { classes } => {
                let Some((first, rest)) = classes.split_first() else {
                    return Err(CorpusError::Invalid("merge needs at least one class".into()));
                };
                let dst = self.class_index(*first)?;
                for id in rest {
                    self.class_index(*id)?;
                }
                let mut moved = Vec::new();
                for id in rest.iter().filter(|id| *id != first) {
                    let i = self.class_index(*id)?;
                    moved.append(&mut self.classes[i].members);
                }
                let d = &mut self.classes[dst];
                d.members.extend(moved);
                d.provenance = ClassProvenance::ManuallyRegrouped;
            }
            Edit::Designate { class, member } => {
                let i = self.class_index(*class)?;
                let c = &mut self.classes[i];
                if !c.members.contains(member) {
                    return Err(CorpusError::NotAMember { class: *class, member: *member });
                }
                c.representative = Some(*member);
            }
        }
        self.classes.retain(|c| !c.members.is_empty());
        Ok(())
    }

    /// Applies edits in order; on any failure the store is left unchanged.
    pub fn regroup(&mut self, edits: &[Edit]) -> Result<(), CorpusError> {
        let mut next = self.clone();
        for (index, e) in edits.iter().enumerate() {
            next.apply_one(e).map_err(|source| CorpusError::Edit {
                index,
                source: Box::new(source),
            })?;
        }
        *self = next;
        Ok(())
    }

    /// Shortest member, ties broken lexicographically.
    pub fn default_representative(&self, c: &TagSequenceClass) -> SegmentRef {
        *c.members
            .iter()
            .min_by_key(|m| {
                let t = self.segment_text(**m).unwrap_or_default();
                (t.split_whitespace().count(), t, **m)
            })
            .expect("classes are nonempty")
    }

    pub fn report(&self) -> SubcorpusReport {
        let mut rows: Vec<ReportRow> = self
            .classes
            .iter()
            .map(|c| {
                let r = c.representative.unwrap_or_else(|| self.default_representative(c));
                ReportRow {
                    class: c.id,
                    size: c.members.len(),
                    representative: self.segment_text(r).unwrap_or_default(),
                    tag_sequence: c.tag_sequence.join(" "),
                }
            })
            .collect();
        rows.sort_by(|a, b| b.size.cmp(&a.size).then(a.class.cmp(&b.class)));
        let total = self.segment_count();
        let top10: usize = rows.iter().take(10).map(|r| r.size).sum();
        SubcorpusReport {
            segments: total,
            classes: rows.len(),
            top10_share: if total == 0 { 0.0 } else { top10 as f64 / total as f64 },
            rows,
        }
    }
}

pub fn group_by_tagsequence(utterances: Vec<Utterance>) -> ClassStore {
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut by_seq: HashMap<Vec<String>, Vec<SegmentRef>> = HashMap::new();
    for u in &utterances {
        for (s, tags) in u.tags.iter().enumerate() {
            let e = by_seq.entry(tags.clone()).or_insert_with(|| {
                order.push(tags.clone());
                Vec::new()
            });
            e.push(SegmentRef {
                utterance: u.id,
                segment: s,
            });
        }
    }
    let classes: Vec<TagSequenceClass> = order
        .into_iter()
        .enumerate()
        .map(|(i, seq)| TagSequenceClass {
            id: ClassId(i as u64 + 1),
            members: by_seq.remove(&seq).unwrap_or_default(),
            tag_sequence: seq,
            representative: None,
            provenance: ClassProvenance::Auto,
        })
        .collect();
    ClassStore {
        next_id: classes.len() as u64 + 1,
        utterances,
        classes,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: ClassId,
    pub size: usize,
    pub representative: String,
    pub tag_sequence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubcorpusReport {
    pub segments: usize,
    pub classes: usize,
    /// Fraction of segments in the ten largest classes.
    pub top10_share: f64,
    pub rows: Vec<ReportRow>,
}

impl SubcorpusReport {
    /// `class_size<TAB>representative` per row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\n", r.size, r.representative));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagger(w: &str) -> String {
        match w {
            "show" | "list" | "give" => "VB",
            "me" => "PRP",
            "flights" | "fares" => "NNS",
            "and" => "CC",
            _ => "UNK",
        }
        .to_string()
    }

    fn store(lines: &[&str]) -> ClassStore {
        let raw: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        group_by_tagsequence(split_utterances(&raw, &SplitConfig::default(), &tagger))
    }

    #[test]
    fn splits_coordinated_commands() {
        let u = split_utterances(&["show flights and list fares".into()], &SplitConfig::default(), &tagger);
        assert_eq!(u[0].segments, vec![vec!["show", "flights"], vec!["list", "fares"]]);
        let u = split_utterances(&["flights and fares".into()], &SplitConfig::default(), &tagger);
        assert_eq!(u[0].segments.len(), 1);
        let u = split_utterances(&["".into()], &SplitConfig::default(), &tagger);
        assert!(u[0].flagged && u[0].segments.is_empty());
        let u = split_utterances(&["Show flights. List fares?".into()], &SplitConfig::default(), &tagger);
        assert_eq!(u[0].segments.len(), 2);
    }

    #[test]
    fn same_tags_same_class() {
        let s = store(&["show me flights", "give me fares", "show flights"]);
        assert_eq!(s.classes.len(), 2);
        assert_eq!(s.classes[0].members.len(), 2);
        assert!(s.check_partition().is_ok());
    }

    #[test]
    fn edits_keep_partition() {
        let mut s = store(&["show me flights", "give me fares", "list me fares", "show flights", "list fares"]);
        let a = s.classes[0].id;
        let b = s.classes[1].id;
        let m = s.classes[0].members[0];
        s.regroup(&[Edit::Move { member: m, to: b }]).unwrap();
        assert_eq!(s.class(a).unwrap().members.len(), 2);
        assert_eq!(s.class(b).unwrap().members.len(), 3);
        let members = s.class(b).unwrap().members[..1].to_vec();
        s.regroup(&[Edit::Split { class: b, members }]).unwrap();
        assert_eq!(s.classes.len(), 3);
        s.check_partition().unwrap();
        let bad = Edit::Designate {
            class: a,
            member: m,
        };
        let before = s.clone();
        assert!(s.regroup(&[bad]).is_err());
        assert_eq!(s, before);
        s.regroup(&[]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn report_order_and_representative() {
        let mut s = store(&["show me flights", "give me fares", "list me fares", "show flights"]);
        let r = s.report();
        assert_eq!(r.rows.iter().map(|r| r.size).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(r.rows[0].representative, "give me fares");
        let c = s.classes[0].id;
        let m = s.classes[0].members[2];
        s.regroup(&[Edit::Designate { class: c, member: m }]).unwrap();
        assert_eq!(s.report().rows[0].representative, "list me fares");
        assert_eq!(s.report().to_tsv().lines().next().unwrap(), "3\tlist me fares");
    }
}
