//! Translation chart with surface and deep edges.
//!
//! Surface translation tiles a fragment's words with bilingual phrase
//! entries. Deep translation rewrites the predicate-argument tree of a
//! phrasal or full-parse fragment with transfer rules and ranks candidates
//! by lexical preferences. Both kinds of edge go into one chart whose
//! vertices are the source chart's; the decoder picks the best sequence.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::chart::{Derivation, Fragment, Stage, StageSnapshot};
use crate::decoder::{self, DecodeGraph, ScoreConfig};
use crate::ebl::{expand, SpecializedGrammar};
use crate::grammar::Grammar;
use crate::semantics::PaTree;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("time limit must be positive")]
    BadTimeLimit,
    #[error("deep translation needs a phrasal or full-parse analysis, got stage {0:?}")]
    StageTooEarly(Stage),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Decode(#[from] decoder::DecodeError),
}

fn is_var(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '\'' | '.'))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredPattern {
    Lit(String),
    Var(String),
}

impl fmt::Display for PredPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredPattern::Lit(s) | PredPattern::Var(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceArg {
    Var { name: String, role: Option<String> },
    /// `..R`: the remaining arguments, in order.
    Rest(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourcePattern {
    /// Bare predicate: lexical substitution keeping source order.
    Bare(String),
    Node { pred: PredPattern, args: Vec<SourceArg> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetItem {
    /// `*`: the translated head.
    Head,
    Var(String),
    Rest(String),
    Word(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetPattern {
    Bare(String),
    Node { pred: PredPattern, items: Vec<TargetItem> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferRule {
    pub id: String,
    pub source: SourcePattern,
    pub target: TargetPattern,
    /// Lowest constituent level the rule applies to.
    pub level: u8,
}

fn split_call(text: &str) -> Result<(&str, Option<Vec<&str>>), String> {
    let text = text.trim();
    match text.find('(') {
        None => Ok((text, None)),
        Some(i) => {
            let inner = text[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| format!("unbalanced parentheses in `{text}`"))?;
            if inner.contains('(') {
                return Err(format!("nested patterns are not supported: `{text}`"));
            }
            let items = inner.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            Ok((text[..i].trim(), Some(items)))
        }
    }
}

impl TransferRule {
    /// Parses both sides; errors name the side (0 source, 1 target).
    pub fn parse(id: &str, source: &str, target: &str, level: u8) -> Result<TransferRule, (usize, String)> {
        let src = Self::parse_source(source).map_err(|m| (0, m))?;
        let tgt = Self::parse_target(target).map_err(|m| (1, m))?;
        let mut vars: HashSet<&str> = HashSet::new();
        match &src {
            SourcePattern::Bare(_) => {
                if !matches!(tgt, TargetPattern::Bare(_)) {
                    return Err((1, "a bare source needs a bare target".into()));
                }
            }
            SourcePattern::Node { pred, args } => {
                if matches!(tgt, TargetPattern::Bare(_)) {
                    return Err((1, "a structured source needs a structured target".into()));
                }
                if let PredPattern::Var(v) = pred {
                    vars.insert(v);
                }
                for (i, a) in args.iter().enumerate() {
                    let name = match a {
                        SourceArg::Var { name, .. } => name,
                        SourceArg::Rest(name) => {
                            if i + 1 != args.len() {
                                return Err((0, "`..` must come last".into()));
                            }
                            name
                        }
                    };
                    if !vars.insert(name) {
                        return Err((0, format!("variable {name} bound twice")));
                    }
                }
            }
        }
        if let TargetPattern::Node { pred, items } = &tgt {
            if matches!(src, SourcePattern::Bare(_)) {
                return Err((1, "a bare source needs a bare target".into()));
            }
            let mut used: Vec<&str> = items
                .iter()
                .filter_map(|it| match it {
                    TargetItem::Var(v) | TargetItem::Rest(v) => Some(v.as_str()),
                    _ => None,
                })
                .collect();
            if let PredPattern::Var(v) = pred {
                used.push(v);
            }
            if let Some(v) = used.iter().find(|v| !vars.contains(**v)) {
                return Err((1, format!("variable {v} does not occur in the source")));
            }
        }
        Ok(TransferRule {
            id: id.to_string(),
            source: src,
            target: tgt,
            level,
        })
    }

    fn parse_pred(s: &str) -> Result<PredPattern, String> {
        if !is_word(s) {
            return Err(format!("bad predicate `{s}`"));
        }
        Ok(if is_var(s) {
            PredPattern::Var(s.to_string())
        } else {
            PredPattern::Lit(s.to_string())
        })
    }

    fn parse_source(text: &str) -> Result<SourcePattern, String> {
        let (pred, items) = split_call(text)?;
        let Some(items) = items else {
            if !is_word(pred) || is_var(pred) {
                return Err(format!("bad bare predicate `{pred}`"));
            }
            return Ok(SourcePattern::Bare(pred.to_string()));
        };
        let pred = Self::parse_pred(pred)?;
        let mut args = Vec::new();
        for it in items {
            if let Some(r) = it.strip_prefix("..") {
                if !is_var(r) {
                    return Err(format!("bad rest variable `{it}`"));
                }
                args.push(SourceArg::Rest(r.to_string()));
                continue;
            }
            let (name, role) = match it.split_once(':') {
                Some((n, r)) => (n, Some(r.to_string())),
                None => (it, None),
            };
            if !is_var(name) || !is_word(name) {
                return Err(format!("source arguments must be variables, got `{it}`"));
            }
            args.push(SourceArg::Var {
                name: name.to_string(),
                role,
            });
        }
        Ok(SourcePattern::Node { pred, args })
    }

    fn parse_target(text: &str) -> Result<TargetPattern, String> {
        let (pred, items) = split_call(text)?;
        let Some(items) = items else {
            if !is_word(pred) || is_var(pred) {
                return Err(format!("bad bare target `{pred}`"));
            }
            return Ok(TargetPattern::Bare(pred.to_string()));
        };
        let pred = Self::parse_pred(pred)?;
        let mut out = Vec::new();
        for it in items {
            out.push(if it == "*" {
                TargetItem::Head
            } else if let Some(r) = it.strip_prefix("..") {
                TargetItem::Rest(r.to_string())
            } else if is_var(it) {
                TargetItem::Var(it.to_string())
            } else if is_word(it) {
                TargetItem::Word(it.to_string())
            } else {
                return Err(format!("bad target item `{it}`"));
            });
        }
        if !out.contains(&TargetItem::Head) {
            out.insert(0, TargetItem::Head);
        }
        Ok(TargetPattern::Node { pred, items: out })
    }

    pub fn is_lexical(&self) -> bool {
        matches!(self.source, SourcePattern::Bare(_))
    }

    pub fn to_dsl(&self) -> String {
        format!("xfer {}: {} => {} level={}", self.id, self.source, self.target, self.level)
    }
}

impl fmt::Display for SourcePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourcePattern::Bare(p) => f.write_str(p),
            SourcePattern::Node { pred, args } => {
                let items: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        SourceArg::Var { name, role: Some(r) } => format!("{name}:{r}"),
                        SourceArg::Var { name, role: None } => name.clone(),
                        SourceArg::Rest(r) => format!("..{r}"),
                    })
                    .collect();
                write!(f, "{pred}({})", items.join(","))
            }
        }
    }
}

impl fmt::Display for TargetPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetPattern::Bare(p) => f.write_str(p),
            TargetPattern::Node { pred, items } => {
                let items: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        TargetItem::Head => "*".to_string(),
                        TargetItem::Var(v) | TargetItem::Word(v) => v.clone(),
                        TargetItem::Rest(r) => format!("..{r}"),
                    })
                    .collect();
                write!(f, "{pred}({})", items.join(","))
            }
        }
    }
}

/// Target words of a bare target; `_` joins multiword targets.
fn target_words(w: &str) -> Vec<String> {
    w.split('_').filter(|s| !s.is_empty()).map(String::from).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceWord {
    pub word: String,
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilingualPhraseEntry {
    pub source: Vec<SourceWord>,
    pub target: Vec<String>,
    pub weight: f64,
}

impl BilingualPhraseEntry {
    pub fn is_deletion(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BilingualLexicon {
    pub entries: Vec<BilingualPhraseEntry>,
    by_first: HashMap<String, Vec<usize>>,
}

impl BilingualLexicon {
    pub fn new(entries: Vec<BilingualPhraseEntry>) -> Self {
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_first.entry(e.source[0].word.clone()).or_default().push(i);
        }
        BilingualLexicon { entries, by_first }
    }

    /// Lines of `src "<words>" [tag=<T>] => tgt "<words>" weight=<w>`.
    /// Source words may carry their own tag as `word/TAG`; a line-level tag
    /// applies to the words without one.
    pub fn parse(text: &str) -> Result<Self, TranslateError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| TranslateError::Format {
                line: i + 1,
                message: m.to_string(),
            };
            let (lhs, rhs) = line.split_once("=>").ok_or_else(|| err("missing `=>`"))?;
            let (src, src_rest) = quoted(lhs.trim().strip_prefix("src").ok_or_else(|| err("expected `src`"))?)
                .ok_or_else(|| err("source must be quoted"))?;
            let mut line_tag = None;
            for w in src_rest.split_whitespace() {
                match w.strip_prefix("tag=") {
                    Some(t) => line_tag = Some(t.to_string()),
                    None => return Err(err(&format!("unexpected `{w}`"))),
                }
            }
            let (tgt, tgt_rest) = quoted(rhs.trim().strip_prefix("tgt").ok_or_else(|| err("expected `tgt`"))?)
                .ok_or_else(|| err("target must be quoted"))?;
            let mut weight = 0.0;
            for w in tgt_rest.split_whitespace() {
                match w.strip_prefix("weight=") {
                    Some(v) => weight = v.parse().map_err(|_| err("bad weight"))?,
                    None => return Err(err(&format!("unexpected `{w}`"))),
                }
            }
            let source: Vec<SourceWord> = src
                .split_whitespace()
                .map(|w| match w.rsplit_once('/') {
                    Some((word, tag)) => SourceWord {
                        word: word.to_lowercase(),
                        tag: Some(tag.to_string()),
                    },
                    None => SourceWord {
                        word: w.to_lowercase(),
                        tag: line_tag.clone(),
                    },
                })
                .collect();
            if source.is_empty() {
                return Err(err("empty source"));
            }
            entries.push(BilingualPhraseEntry {
                source,
                target: tgt.split_whitespace().map(String::from).collect(),
                weight,
            });
        }
        Ok(BilingualLexicon::new(entries))
    }

    pub fn has_tagged_entries(&self) -> bool {
        self.entries.iter().any(|e| e.source.iter().any(|w| w.tag.is_some()))
    }

    fn candidates(&self, word: &str) -> impl Iterator<Item = (usize, &BilingualPhraseEntry)> {
        self.by_first
            .get(word)
            .into_iter()
            .flatten()
            .map(move |&i| (i, &self.entries[i]))
    }
}

fn quoted(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start().strip_prefix('"')?;
    let end = s.find('"')?;
    Some((&s[..end], &s[end + 1..]))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LexPreferences {
    map: HashMap<(String, String, Option<String>), f64>,
}

#[derive(Serialize, Deserialize)]
struct PrefRecord {
    source: String,
    target: String,
    #[serde(default)]
    context: Option<String>,
    weight: f64,
}

impl LexPreferences {
    pub fn insert(&mut self, source: &str, target: &str, context: Option<&str>, weight: f64) {
        assert!(weight.is_finite(), "preference weights are finite");
        self.map
            .insert((source.to_string(), target.to_string(), context.map(String::from)), weight);
    }

    /// Context-specific weight, else the context-free one, else 0.
    pub fn get(&self, source: &str, target: &str, context: Option<&str>) -> f64 {
        let key = |c: Option<&str>| (source.to_string(), target.to_string(), c.map(String::from));
        if context.is_some() {
            if let Some(w) = self.map.get(&key(context)) {
                return *w;
            }
        }
        self.map.get(&key(None)).copied().unwrap_or(0.0)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TranslateError> {
        let mut p = LexPreferences::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: PrefRecord = serde_json::from_str(line).map_err(|e| TranslateError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !r.weight.is_finite() {
                return Err(TranslateError::Format {
                    line: i + 1,
                    message: "weight must be finite".into(),
                });
            }
            p.insert(&r.source, &r.target, r.context.as_deref(), r.weight);
        }
        Ok(p)
    }

    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<_> = self.map.iter().collect();
        keys.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for ((s, t, c), w) in keys {
            let r = PrefRecord {
                source: s.clone(),
                target: t.clone(),
                context: c.clone(),
                weight: *w,
            };
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Surface,
    Deep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationEdge {
    pub from: usize,
    pub to: usize,
    pub text: Vec<String>,
    pub method: Method,
    pub score: f64,
    /// Source fragment and the entries or rules used.
    pub provenance: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateConfig {
    pub deep: bool,
    pub deep_bonus: f64,
    /// Added once per structural (non-lexical) transfer rule used.
    pub structure_bonus: f64,
    pub top_k: usize,
    /// Partial candidates kept per tree node.
    pub beam: usize,
    pub passthrough_penalty: f64,
    pub score: ScoreConfig,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        TranslateConfig {
            deep: true,
            deep_bonus: 2.0,
            structure_bonus: 0.5,
            top_k: 3,
            beam: 16,
            passthrough_penalty: -2.0,
            score: ScoreConfig::translation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceToken {
    pub word: String,
    pub tag: Option<String>,
    pub from: usize,
    pub to: usize,
}

/// Greedy left-to-right longest-match tiling. Ties go to the higher weight,
/// then to the earlier entry; untiled words pass through.
pub fn surface_translate(tokens: &[SourceToken], lexicon: &BilingualLexicon, cfg: &TranslateConfig) -> Vec<TranslationEdge> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let word = tokens[i].word.to_lowercase();
        let mut best: Option<(usize, usize, &BilingualPhraseEntry)> = None;
        for (idx, e) in lexicon.candidates(&word) {
            let n = e.source.len();
            if i + n > tokens.len() {
                continue;
            }
            let fits = e.source.iter().zip(&tokens[i..i + n]).all(|(s, t)| {
                s.word == t.word.to_lowercase() && s.tag.as_ref().is_none_or(|tag| t.tag.as_ref() == Some(tag))
            });
            if !fits {
                continue;
            }
            let better = match best {
                None => true,
                Some((bn, _, be)) => n > bn || (n == bn && e.weight > be.weight),
            };
            if better {
                best = Some((n, idx, e));
            }
        }
        match best {
            Some((n, idx, e)) => {
                out.push(TranslationEdge {
                    from: tokens[i].from,
                    to: tokens[i + n - 1].to,
                    text: e.target.clone(),
                    method: Method::Surface,
                    score: e.weight,
                    provenance: vec![format!("entry:{idx}")],
                });
                i += n;
            }
            None => {
                out.push(TranslationEdge {
                    from: tokens[i].from,
                    to: tokens[i].to,
                    text: vec![tokens[i].word.clone()],
                    method: Method::Surface,
                    score: cfg.passthrough_penalty,
                    provenance: vec!["passthrough".into()],
                });
                i += 1;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepCandidate {
    pub words: Vec<String>,
    pub score: f64,
    pub rules: Vec<String>,
}

struct Deep<'a> {
    rules: Vec<&'a TransferRule>,
    prefs: &'a LexPreferences,
    cfg: &'a TranslateConfig,
}

impl Deep<'_> {
    fn lexical_choices(&self, pred: &str, ctx: Option<&str>) -> Vec<(Vec<String>, f64, String)> {
        self.rules
            .iter()
            .filter_map(|r| match (&r.source, &r.target) {
                (SourcePattern::Bare(p), TargetPattern::Bare(t)) if p == pred => {
                    Some((target_words(t), self.prefs.get(pred, t, ctx), r.id.clone()))
                }
                _ => None,
            })
            .collect()
    }

    fn node(&self, t: &PaTree, ctx: Option<&str>) -> Vec<DeepCandidate> {
        let mut all = Vec::new();
        for r in &self.rules {
            match (&r.source, &r.target) {
                (SourcePattern::Bare(p), TargetPattern::Bare(w)) if *p == t.pred => {
                    let head = DeepCandidate {
                        words: target_words(w),
                        score: self.prefs.get(&t.pred, w, ctx),
                        rules: vec![r.id.clone()],
                    };
                    let mut slots: Vec<Vec<DeepCandidate>> = Vec::new();
                    for (i, a) in t.args.iter().enumerate() {
                        if i == t.head_pos {
                            slots.push(vec![head.clone()]);
                        }
                        slots.push(self.node(a, Some(&t.pred)));
                    }
                    if t.head_pos == t.args.len() {
                        slots.push(vec![head]);
                    }
                    all.extend(self.combine(slots, 0.0));
                }
                (SourcePattern::Node { pred, args }, TargetPattern::Node { pred: tpred, items }) => {
                    if let PredPattern::Lit(p) = pred {
                        if *p != t.pred {
                            continue;
                        }
                    }
                    let Some(bind) = match_args(args, &t.args) else { continue };
                    let heads: Vec<DeepCandidate> = match tpred {
                        PredPattern::Lit(w) => vec![DeepCandidate {
                            words: target_words(w),
                            score: self.prefs.get(&t.pred, w, ctx),
                            rules: vec![],
                        }],
                        PredPattern::Var(_) => self
                            .lexical_choices(&t.pred, ctx)
                            .into_iter()
                            .map(|(words, score, id)| DeepCandidate {
                                words,
                                score,
                                rules: vec![id],
                            })
                            .collect(),
                    };
                    if heads.is_empty() {
                        continue;
                    }
                    let mut slots: Vec<Vec<DeepCandidate>> = Vec::new();
                    let mut ok = true;
                    for it in items {
                        match it {
                            TargetItem::Head => slots.push(heads.clone()),
                            TargetItem::Word(w) => slots.push(vec![DeepCandidate {
                                words: target_words(w),
                                score: 0.0,
                                rules: vec![],
                            }]),
                            TargetItem::Var(v) | TargetItem::Rest(v) => {
                                for &k in bind.get(v.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                                    let c = self.node(&t.args[k], Some(&t.pred));
                                    ok &= !c.is_empty();
                                    slots.push(c);
                                }
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let mut cands = self.combine(slots, self.cfg.structure_bonus);
                    for c in &mut cands {
                        c.rules.insert(0, r.id.clone());
                    }
                    all.extend(cands);
                }
                _ => {}
            }
        }
        self.rank(all)
    }

    fn combine(&self, slots: Vec<Vec<DeepCandidate>>, bonus: f64) -> Vec<DeepCandidate> {
        let mut partial = vec![DeepCandidate {
            words: vec![],
            score: bonus,
            rules: vec![],
        }];
        for slot in slots {
            if slot.is_empty() {
                return Vec::new();
            }
            let mut next = Vec::with_capacity(partial.len() * slot.len());
            for p in &partial {
                for c in &slot {
                    let mut words = p.words.clone();
                    words.extend(c.words.iter().cloned());
                    let mut rules = p.rules.clone();
                    rules.extend(c.rules.iter().cloned());
                    next.push(DeepCandidate {
                        words,
                        score: p.score + c.score,
                        rules,
                    });
                }
            }
            partial = self.rank(next);
        }
        partial
    }

    /// Dedupes by output words (keeping the best score), orders by score
    /// then words, keeps the beam.
    fn rank(&self, mut v: Vec<DeepCandidate>) -> Vec<DeepCandidate> {
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.words.cmp(&b.words)));
        let mut seen = HashSet::new();
        v.retain(|c| seen.insert(c.words.clone()));
        v.truncate(self.cfg.beam.max(1));
        v
    }
}

/// Binds pattern variables to argument indices.
fn match_args<'p>(pattern: &'p [SourceArg], args: &[PaTree]) -> Option<HashMap<&'p str, Vec<usize>>> {
    let mut bind = HashMap::new();
    let mut i = 0;
    for p in pattern {
        match p {
            SourceArg::Var { name, role } => {
                let a = args.get(i)?;
                if role.as_ref().is_some_and(|r| *r != a.role) {
                    return None;
                }
                bind.insert(name.as_str(), vec![i]);
                i += 1;
            }
            SourceArg::Rest(name) => {
                bind.insert(name.as_str(), (i..args.len()).collect());
                i = args.len();
            }
        }
    }
    (i == args.len()).then_some(bind)
}

/// Top-down transfer of a predicate-argument tree. Candidates are ordered
/// by summed preference weight; the top `cfg.top_k` are returned.
pub fn deep_translate(
    tree: &PaTree,
    stage: Stage,
    level: u8,
    rules: &[TransferRule],
    prefs: &LexPreferences,
    cfg: &TranslateConfig,
) -> Result<Vec<DeepCandidate>, TranslateError> {
    if stage < Stage::Phrasal || level < 2 {
        return Err(TranslateError::StageTooEarly(stage));
    }
    let deep = Deep {
        rules: rules.iter().filter(|r| r.level <= level).collect(),
        prefs,
        cfg,
    };
    let mut c = deep.node(tree, None);
    c.truncate(cfg.top_k);
    Ok(c)
}

/// Target-side chart mirroring the source chart's vertices.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TranslationChart {
    pub vertex_count: usize,
    pub edges: Vec<TranslationEdge>,
    #[serde(skip)]
    keys: HashSet<(usize, usize, Vec<String>, Method)>,
}

impl TranslationChart {
    pub fn new(vertex_count: usize) -> Self {
        TranslationChart {
            vertex_count,
            ..Default::default()
        }
    }

    /// Inserts an edge for the source fragment spanning `span`. Returns
    /// false for duplicates.
    pub fn insert(&mut self, span: (usize, usize), edge: TranslationEdge) -> bool {
        assert_eq!((edge.from, edge.to), span, "translation edges mirror their source fragment");
        if !self.keys.insert((edge.from, edge.to, edge.text.clone(), edge.method)) {
            return false;
        }
        self.edges.push(edge);
        true
    }

    pub fn best(&self, cfg: &ScoreConfig) -> Result<(Vec<String>, f64, Vec<usize>), TranslateError> {
        let mut g = DecodeGraph::new(self.vertex_count);
        for e in &self.edges {
            g.push(e.from, e.to, e.score);
        }
        let path = decoder::best_sequence(&g, cfg.fragment_penalty)?;
        let words = path
            .fragments
            .iter()
            .flat_map(|&i| self.edges[i].text.iter().cloned())
            .collect();
        Ok((words, path.total_score, path.fragments))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub iteration: usize,
    pub stage: Stage,
    pub text: String,
    pub score: f64,
}

/// Source of "time is up" for the anytime loop.
pub trait Budget {
    fn exhausted(&self) -> bool;
}

pub struct Deadline(pub Instant);

impl Budget for Deadline {
    fn exhausted(&self) -> bool {
        Instant::now() >= self.0
    }
}

/// Everything the translator reads besides the stage outputs.
pub struct Resources<'a> {
    pub grammar: &'a Grammar,
    pub specialized: Option<&'a SpecializedGrammar>,
    pub lexicon: &'a BilingualLexicon,
    pub prefs: &'a LexPreferences,
}

fn tokens_of(fragments: &[Fragment]) -> Vec<SourceToken> {
    let mut out = Vec::new();
    for f in fragments {
        let tag = f.node.tag().map(str::to_string);
        let words = f.node.words();
        if words.len() == 1 {
            out.push(SourceToken {
                word: words[0].to_string(),
                tag,
                from: f.from,
                to: f.to,
            });
        }
    }
    out
}

fn deep_edges(f: &Fragment, stage: Stage, res: &Resources, cfg: &TranslateConfig) -> Vec<TranslationEdge> {
    let node = match (res.specialized, &f.node.derivation) {
        (Some(spec), Derivation::Rule { .. }) => match expand(&f.node, spec, res.grammar) {
            Ok(n) => n,
            Err(_) => return Vec::new(),
        },
        _ => f.node.clone(),
    };
    let tree = PaTree::from_constituent(&node, res.grammar);
    let Ok(cands) = deep_translate(&tree, stage, f.level, &res.grammar.transfer, res.prefs, cfg) else {
        return Vec::new();
    };
    cands
        .into_iter()
        .map(|c| TranslationEdge {
            from: f.from,
            to: f.to,
            text: c.words,
            method: Method::Deep,
            score: c.score + cfg.deep_bonus,
            provenance: std::iter::once(f.signature.clone()).chain(c.rules).collect(),
        })
        .collect()
}

/// Incremental translator fed one stage snapshot at a time.
pub struct AnytimeTranslator<'r, 'a> {
    res: &'r Resources<'a>,
    cfg: &'r TranslateConfig,
    chart: TranslationChart,
    emissions: Vec<Emission>,
}

impl<'r, 'a> AnytimeTranslator<'r, 'a> {
    pub fn new(vertex_count: usize, res: &'r Resources<'a>, cfg: &'r TranslateConfig) -> Self {
        AnytimeTranslator {
            res,
            cfg,
            chart: TranslationChart::new(vertex_count),
            emissions: Vec::new(),
        }
    }

    /// Adds the stage's edges; emits the new best translation when any
    /// edge was added.
    pub fn feed(&mut self, snap: &StageSnapshot) -> Option<&Emission> {
        let (res, cfg) = (self.res, self.cfg);
        let edges = match snap.stage {
            Stage::Raw => surface_translate(&tokens_of(&snap.fragments), res.lexicon, cfg),
            Stage::Lexical if res.lexicon.has_tagged_entries() => {
                surface_translate(&tokens_of(&snap.fragments), res.lexicon, cfg)
            }
            Stage::Lexical => Vec::new(),
            Stage::Phrasal | Stage::Full if cfg.deep => snap
                .fragments
                .iter()
                .filter(|f| f.level >= 2)
                .flat_map(|f| deep_edges(f, snap.stage, res, cfg))
                .collect(),
            Stage::Phrasal | Stage::Full => Vec::new(),
        };
        let mut added = 0;
        for e in edges {
            if self.chart.insert((e.from, e.to), e) {
                added += 1;
            }
        }
        if added == 0 {
            return None;
        }
        let (words, score, _) = self.chart.best(&cfg.score).ok()?;
        self.emissions.push(Emission {
            iteration: self.emissions.len() + 1,
            stage: snap.stage,
            text: words.join(" "),
            score,
        });
        self.emissions.last()
    }

    pub fn chart(&self) -> &TranslationChart {
        &self.chart
    }

    pub fn emissions(&self) -> &[Emission] {
        &self.emissions
    }

    pub fn into_emissions(self) -> Vec<Emission> {
        self.emissions
    }
}

/// Translates stage snapshots in order, emitting the current best target
/// sentence whenever a stage adds edges. Stops early when `budget` runs out.
pub fn anytime_translate_with<'s>(
    stages: impl IntoIterator<Item = &'s StageSnapshot>,
    vertex_count: usize,
    res: &Resources,
    cfg: &TranslateConfig,
    budget: &dyn Budget,
) -> Result<Vec<Emission>, TranslateError> {
    let mut t = AnytimeTranslator::new(vertex_count, res, cfg);
    for snap in stages {
        if budget.exhausted() {
            break;
        }
        t.feed(snap);
    }
    Ok(t.into_emissions())
}

pub fn anytime_translate<'s>(
    stages: impl IntoIterator<Item = &'s StageSnapshot>,
    vertex_count: usize,
    res: &Resources,
    cfg: &TranslateConfig,
    time_limit: Duration,
) -> Result<Vec<Emission>, TranslateError> {
    if time_limit.is_zero() {
        return Err(TranslateError::BadTimeLimit);
    }
    anytime_translate_with(stages, vertex_count, res, cfg, &Deadline(Instant::now() + time_limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &str) -> Vec<SourceToken> {
        words
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| SourceToken {
                word: w.into(),
                tag: None,
                from: i,
                to: i + 1,
            })
            .collect()
    }

    #[test]
    fn pattern_parsing() {
        let r = TransferRule::parse("t", "show(X, Y)", "visa(X, Y)", 2).unwrap();
        assert_eq!(r.to_dsl(), "xfer t: show(X,Y) => visa(*,X,Y) level=2");
        assert!(TransferRule::parse("t", "show(X)", "visa(Z)", 2).is_err());
        assert_eq!(TransferRule::parse("t", "show(X)", "vol", 2).unwrap_err().0, 1);
        assert!(TransferRule::parse("t", "N(..R, A)", "N(*)", 2).is_err());
        assert!(TransferRule::parse("t", "flight", "vol", 2).unwrap().is_lexical());
    }

    #[test]
    fn surface_single_entry_and_passthrough() {
        let lex = BilingualLexicon::parse("src \"show me\" => tgt \"visa mig\" weight=0\n").unwrap();
        let cfg = TranslateConfig::default();
        let e = surface_translate(&toks("show me"), &lex, &cfg);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].text, vec!["visa", "mig"]);
        let e = surface_translate(&toks("zebra"), &lex, &cfg);
        assert_eq!(e[0].score, cfg.passthrough_penalty);
        assert_eq!(e[0].text, vec!["zebra"]);
    }

    #[test]
    fn tagged_entries_need_matching_tag() {
        let lex = BilingualLexicon::parse("src \"show\" tag=VB => tgt \"montrez\" weight=0\n").unwrap();
        let cfg = TranslateConfig::default();
        let mut t = toks("show");
        assert_eq!(surface_translate(&t, &lex, &cfg)[0].provenance, vec!["passthrough"]);
        t[0].tag = Some("VB".into());
        assert_eq!(surface_translate(&t, &lex, &cfg)[0].text, vec!["montrez"]);
    }

    #[test]
    fn preferences_order_lexical_choices() {
        let rules = vec![
            TransferRule::parse("a", "show(X, Y)", "visa(X, Y)", 2).unwrap(),
            TransferRule::parse("b", "flight", "flyg", 2).unwrap(),
            TransferRule::parse("c", "flight", "flygningar", 2).unwrap(),
            TransferRule::parse("d", "you", "dig", 2).unwrap(),
        ];
        let mut prefs = LexPreferences::default();
        prefs.insert("flight", "flygningar", None, 0.9);
        prefs.insert("flight", "flyg", None, 0.1);
        let tree = PaTree::parse("show(np:you, np:flight)").unwrap();
        let cfg = TranslateConfig::default();
        let c = deep_translate(&tree, Stage::Full, 4, &rules, &prefs, &cfg).unwrap();
        assert_eq!(c[0].words, vec!["visa", "dig", "flygningar"]);
        assert_eq!(c[1].words, vec!["visa", "dig", "flyg"]);
        assert!(deep_translate(&tree, Stage::Lexical, 4, &rules, &prefs, &cfg).is_err());
        let none = PaTree::parse("list(np:you)").unwrap();
        assert!(deep_translate(&none, Stage::Full, 4, &rules, &prefs, &cfg).unwrap().is_empty());
    }

    #[test]
    fn reordering_rule_moves_modifier() {
        let rules = vec![
            TransferRule::parse("n", "N(D:det, A:adj)", "N(D, *, A)", 2).unwrap(),
            TransferRule::parse("l1", "flight", "vols", 2).unwrap(),
            TransferRule::parse("l2", "cheap", "economiques", 2).unwrap(),
            TransferRule::parse("l3", "the", "les", 2).unwrap(),
        ];
        let tree = PaTree::parse("flight(det:the, adj:cheap, *)").unwrap();
        let c = deep_translate(&tree, Stage::Phrasal, 2, &rules, &LexPreferences::default(), &TranslateConfig::default()).unwrap();
        assert_eq!(c[0].words, vec!["les", "vols", "economiques"]);
        // the plain lexical reading keeps source order but ranks lower
        assert_eq!(c[1].words, vec!["les", "economiques", "vols"]);
    }

    #[test]
    #[should_panic(expected = "mirror")]
    fn insertion_checks_vertices() {
        let mut chart = TranslationChart::new(3);
        chart.insert(
            (0, 2),
            TranslationEdge {
                from: 0,
                to: 1,
                text: vec![],
                method: Method::Surface,
                score: 0.0,
                provenance: vec![],
            },
        );
    }
}
