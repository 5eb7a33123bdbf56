//! Staged bottom-up chart parsing.
//!
//! Parsing runs in passes: lexical lookup, the phrasal rules, then the
//! non-phrasal (or macro) rules level by level. Each pass is an agenda-driven
//! closure; the pruner may delete constituents between passes. After every
//! pass the best fragment sequence is extracted with the decoder.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decoder::{self, DecodeGraph, ScoreConfig};
use crate::ebl::SpecializedGrammar;
use crate::grammar::{apply_shape, unify, Category, FeatureTerm, Grammar, Rule, UNKNOWN_CATEGORY};
use crate::lattice::Lattice;
use crate::pruner::{self, PruneConfig, PruneModel};
use crate::sexpr::SExpr;

/// Category of level-0 word constituents.
pub const WORD_CATEGORY: &str = "WORD";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown word `{0}` and unknown-word handling is disabled")]
    UnknownWord(String),
    #[error(transparent)]
    Decode(#[from] decoder::DecodeError),
    #[error("bad derivation: {0}")]
    BadDerivation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Lexical,
    Phrasal,
    Full,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Raw, Stage::Lexical, Stage::Phrasal, Stage::Full];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Lexical => "lexical",
            Stage::Phrasal => "phrasal",
            Stage::Full => "full",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Derivation {
    Word(Arc<str>),
    Lex {
        word: Arc<str>,
        tag: Arc<str>,
        sem: Arc<str>,
        /// Position among the word's lexicon entries.
        sense: usize,
    },
    Rule {
        rule: Arc<str>,
        children: Vec<Arc<Constituent>>,
    },
}

#[derive(Clone, Debug)]
pub struct Constituent {
    pub from: usize,
    pub to: usize,
    /// Symbol plus the constituent's feature bindings.
    pub category: Category,
    pub derivation: Derivation,
    pub level: u8,
    pub acoustic: f64,
    pub linguistic: f64,
}

impl Constituent {
    pub fn bindings(&self) -> &FeatureTerm {
        &self.category.features
    }

    pub fn symbol(&self) -> &str {
        &self.category.symbol
    }

    pub fn rule_id(&self) -> Option<&str> {
        match &self.derivation {
            Derivation::Rule { rule, .. } => Some(rule),
            _ => None,
        }
    }

    pub fn children(&self) -> &[Arc<Constituent>] {
        match &self.derivation {
            Derivation::Rule { children, .. } => children,
            _ => &[],
        }
    }

    /// Lexical tag for level-1 constituents.
    pub fn tag(&self) -> Option<&str> {
        match &self.derivation {
            Derivation::Lex { tag, .. } => Some(tag),
            _ => None,
        }
    }

    /// What a neighbouring constituent sees: the tag of a lexical item,
    /// otherwise the category symbol.
    pub fn neighbour_tag(&self) -> &str {
        self.tag().unwrap_or(&self.category.symbol)
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.push_words(&mut out);
        out
    }

    fn push_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.derivation {
            Derivation::Word(w) => out.push(w),
            Derivation::Lex { word, .. } => out.push(word),
            Derivation::Rule { children, .. } => children.iter().for_each(|c| c.push_words(out)),
        }
    }

    pub fn surface(&self) -> String {
        self.words().join(" ")
    }

    /// Derivation in s-expression form: `(rule child ...)` with leaves
    /// `word/TAG`, plus `#k` for the k-th entry of an ambiguous word.
    pub fn signature(&self) -> String {
        let mut s = String::new();
        self.write_signature(&mut s);
        s
    }

    fn write_signature(&self, out: &mut String) {
        match &self.derivation {
            Derivation::Word(w) => out.push_str(w),
            Derivation::Lex { word, tag, sense, .. } => {
                out.push_str(word);
                out.push('/');
                out.push_str(tag);
                if *sense > 0 {
                    out.push('#');
                    out.push_str(&sense.to_string());
                }
            }
            Derivation::Rule { rule, children } => {
                out.push('(');
                out.push_str(rule);
                for c in children {
                    out.push(' ');
                    c.write_signature(out);
                }
                out.push(')');
            }
        }
    }

    /// Every node of the derivation, root first.
    pub fn subtree(&self) -> Vec<&Constituent> {
        let mut out = vec![self];
        let mut i = 0;
        while i < out.len() {
            out.extend(out[i].children().iter().map(|c| c.as_ref()));
            i += 1;
        }
        out
    }
}

/// A rule as the closure engine sees it: original rules and macro-rules
/// alike.
#[derive(Clone, Debug, PartialEq)]
pub struct Production {
    pub id: Arc<str>,
    pub lhs: Category,
    pub rhs: Vec<Category>,
    /// Rule level; constituents built by it sit one level higher.
    pub level: u8,
    pub(crate) var_count: u32,
}

impl Production {
    pub fn from_rule(r: &Rule) -> Self {
        Production {
            id: r.id.clone(),
            lhs: r.lhs.clone(),
            rhs: r.rhs.clone(),
            level: r.level,
            var_count: r.var_count,
        }
    }

    pub(crate) fn new(id: &str, lhs: Category, rhs: Vec<Category>, level: u8, var_count: u32) -> Self {
        Production {
            id: Arc::from(id),
            lhs,
            rhs,
            level,
            var_count,
        }
    }

    pub fn apply(&self, children: &[&FeatureTerm]) -> Option<FeatureTerm> {
        apply_shape(&self.lhs.features, &self.rhs, self.var_count, children)
    }

    pub fn output_level(&self) -> u8 {
        self.level + 1
    }
}

/// Builds the constituent a production yields over `children`, or `None`
/// when the features clash.
pub(crate) fn build(
    prod: &Production,
    children: Vec<Arc<Constituent>>,
    model: Option<&PruneModel>,
) -> Option<Constituent> {
    let terms: Vec<&FeatureTerm> = children.iter().map(|c| c.bindings()).collect();
    if children.iter().zip(&prod.rhs).any(|(c, p)| c.category.symbol != p.symbol) {
        return None;
    }
    let bindings = prod.apply(&terms)?;
    let mut c = Constituent {
        from: children[0].from,
        to: children[children.len() - 1].to,
        category: Category {
            symbol: prod.lhs.symbol.clone(),
            features: bindings,
        },
        derivation: Derivation::Rule {
            rule: prod.id.clone(),
            children,
        },
        level: prod.output_level(),
        acoustic: 0.0,
        linguistic: 0.0,
    };
    c.acoustic = c.children().iter().map(|k| k.acoustic).sum();
    let own = model.map_or(0.0, |m| m.log_own(&c));
    c.linguistic = c.children().iter().map(|k| k.linguistic).sum::<f64>() + own;
    Some(c)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum DerivKey {
    Word(Arc<str>),
    Lex(Arc<str>, usize),
    Rule(Arc<str>, Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct ItemKey {
    from: usize,
    to: usize,
    category: Category,
    deriv: DerivKey,
}

fn item_key(c: &Constituent) -> ItemKey {
    let deriv = match &c.derivation {
        Derivation::Word(w) => DerivKey::Word(w.clone()),
        Derivation::Lex { tag, sense, .. } => DerivKey::Lex(tag.clone(), *sense),
        Derivation::Rule { rule, children } => DerivKey::Rule(
            rule.clone(),
            children.iter().map(|k| Arc::as_ptr(k) as usize).collect(),
        ),
    };
    ItemKey {
        from: c.from,
        to: c.to,
        category: c.category.clone(),
        deriv,
    }
}

/// Vertex-indexed constituent store.
#[derive(Clone, Debug)]
pub struct Chart {
    vertex_count: usize,
    items: Vec<Arc<Constituent>>,
    alive: Vec<bool>,
    by_from: Vec<Vec<usize>>,
    by_to: Vec<Vec<usize>>,
    seen: HashMap<ItemKey, usize>,
    stage: Stage,
    truncated: bool,
}

impl Chart {
    pub fn new(vertex_count: usize) -> Self {
        Chart {
            vertex_count,
            items: Vec::new(),
            alive: Vec::new(),
            by_from: vec![Vec::new(); vertex_count],
            by_to: vec![Vec::new(); vertex_count],
            seen: HashMap::new(),
            stage: Stage::Raw,
            truncated: false,
        }
    }

    /// Raw chart: one level-0 constituent per lattice edge.
    pub fn from_lattice(lattice: &Lattice) -> Self {
        let mut chart = Chart::new(lattice.vertex_count());
        for e in lattice.edges() {
            chart.insert(Constituent {
                from: e.from,
                to: e.to,
                category: Category::bare(WORD_CATEGORY),
                derivation: Derivation::Word(Arc::from(e.word.as_str())),
                level: 0,
                acoustic: e.acoustic,
                linguistic: 0.0,
            });
        }
        chart
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn end(&self) -> usize {
        self.vertex_count - 1
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub(crate) fn advance(&mut self, stage: Stage) {
        debug_assert!(stage >= self.stage, "stages only move forward");
        self.stage = self.stage.max(stage);
    }

    /// True when a closure stopped at the constituent cap.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Adds a constituent unless an identical one was ever present.
    pub fn insert(&mut self, c: Constituent) -> Option<usize> {
        assert!(c.from < c.to && c.to < self.vertex_count, "span out of range");
        let key = item_key(&c);
        if self.seen.contains_key(&key) {
            return None;
        }
        let id = self.items.len();
        self.seen.insert(key, id);
        self.by_from[c.from].push(id);
        self.by_to[c.to].push(id);
        self.items.push(Arc::new(c));
        self.alive.push(true);
        Some(id)
    }

    pub fn remove(&mut self, id: usize) {
        self.alive[id] = false;
    }

    pub(crate) fn revive(&mut self, id: usize) {
        self.alive[id] = true;
    }

    pub fn is_alive(&self, id: usize) -> bool {
        self.alive[id]
    }

    pub fn get(&self, id: usize) -> &Arc<Constituent> {
        &self.items[id]
    }

    /// Ids ever inserted (dead ones included).
    pub fn capacity(&self) -> usize {
        self.items.len()
    }

    pub fn live_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.items.len()).filter(|&i| self.alive[i])
    }

    pub fn constituents(&self) -> impl Iterator<Item = &Arc<Constituent>> + '_ {
        self.live_ids().map(|i| &self.items[i])
    }

    pub fn len(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn starting_at(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_from[v].iter().copied().filter(|&i| self.alive[i])
    }

    pub fn ending_at(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_to[v].iter().copied().filter(|&i| self.alive[i])
    }

    /// Full-span constituents of the start category.
    pub fn analyses(&self, start: &Category) -> Vec<Arc<Constituent>> {
        self.ending_at(self.end())
            .map(|i| &self.items[i])
            .filter(|c| {
                c.from == 0
                    && c.level >= 1
                    && c.category.symbol == start.symbol
                    && unify(&start.features, c.bindings()).is_some()
            })
            .cloned()
            .collect()
    }

    /// Decoding graph over the live constituents; the second vector maps
    /// graph edges back to chart ids.
    pub fn decode_graph(&self, cfg: &ScoreConfig) -> (DecodeGraph, Vec<usize>) {
        let mut g = DecodeGraph::new(self.vertex_count);
        let mut ids = Vec::new();
        for id in self.live_ids() {
            let c = &self.items[id];
            g.push(c.from, c.to, cfg.edge_score(c.acoustic, c.linguistic, c.level));
            ids.push(id);
        }
        (g, ids)
    }

    pub fn dump(&self) -> Vec<ChartRecord> {
        self.live_ids()
            .map(|id| {
                let c = &self.items[id];
                ChartRecord {
                    id,
                    from: c.from,
                    to: c.to,
                    category: c.category.to_string(),
                    level: c.level,
                    acoustic: c.acoustic,
                    linguistic: c.linguistic,
                    rule: c.rule_id().map(str::to_string),
                    tag: c.tag().map(str::to_string),
                    words: c.surface(),
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("chart records serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub category: String,
    pub level: u8,
    pub acoustic: f64,
    pub linguistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub words: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Chart,
    /// GLR over the specialized grammar's tables; falls back to the chart
    /// engine when no specialized grammar is given.
    Lr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseConfig {
    pub unknown_words: bool,
    pub unknown_tag: String,
    /// Closure stops adding constituents past this many.
    pub max_constituents: usize,
    pub prune: PruneConfig,
    pub score: ScoreConfig,
    pub engine: Engine,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            unknown_words: true,
            unknown_tag: UNKNOWN_CATEGORY.to_string(),
            max_constituents: 200_000,
            prune: PruneConfig::default(),
            score: ScoreConfig::default(),
            engine: Engine::Chart,
        }
    }
}

/// Raw chart plus one level-1 constituent per (edge, lexicon entry).
pub fn lexical_pass(
    lattice: &Lattice,
    grammar: &Grammar,
    cfg: &ParseConfig,
    model: Option<&PruneModel>,
) -> Result<Chart, ParseError> {
    let mut chart = Chart::from_lattice(lattice);
    for e in lattice.edges() {
        let word: Arc<str> = Arc::from(e.word.as_str());
        let mut any = false;
        for (sense, (_, entry)) in grammar.lookup(&e.word).enumerate() {
            any = true;
            let mut c = Constituent {
                from: e.from,
                to: e.to,
                category: entry.category.clone(),
                derivation: Derivation::Lex {
                    word: word.clone(),
                    tag: Arc::from(entry.tag.as_str()),
                    sem: Arc::from(entry.sem.as_str()),
                    sense,
                },
                level: 1,
                acoustic: e.acoustic,
                linguistic: 0.0,
            };
            c.linguistic = model.map_or(0.0, |m| m.log_own(&c));
            chart.insert(c);
        }
        if !any {
            if !cfg.unknown_words {
                return Err(ParseError::UnknownWord(e.word.clone()));
            }
            chart.insert(unknown(e.from, e.to, word, &cfg.unknown_tag, e.acoustic));
        }
    }
    chart.advance(Stage::Lexical);
    Ok(chart)
}

fn unknown(from: usize, to: usize, word: Arc<str>, tag: &str, acoustic: f64) -> Constituent {
    Constituent {
        from,
        to,
        category: Category::bare(UNKNOWN_CATEGORY),
        derivation: Derivation::Lex {
            sem: word.clone(),
            word,
            tag: Arc::from(tag),
            sense: 0,
        },
        level: 1,
        acoustic,
        linguistic: 0.0,
    }
}

/// Closes the chart under the grammar's phrasal rules.
pub fn phrasal_pass(chart: &mut Chart, grammar: &Grammar, cfg: &ParseConfig, model: Option<&PruneModel>) {
    let prods: Vec<Production> = grammar.phrasal_rules().map(Production::from_rule).collect();
    close(chart, &prods, model, cfg.max_constituents);
    chart.advance(Stage::Phrasal);
}

/// Applies `prods` level by level in ascending order, pruning after every
/// level listed in the plan.
pub fn full_parse(
    chart: &mut Chart,
    prods: &[Production],
    cfg: &ParseConfig,
    model: Option<&PruneModel>,
) {
    let levels: BTreeSet<u8> = prods.iter().map(|p| p.level).collect();
    for level in levels {
        let at: Vec<Production> = prods.iter().filter(|p| p.level == level).cloned().collect();
        close(chart, &at, model, cfg.max_constituents);
        if let Some(m) = model {
            if cfg.prune.plan.contains(&level) {
                pruner::prune(chart, m, &cfg.prune);
            }
        }
    }
    chart.advance(Stage::Full);
}

/// Agenda-driven closure. A popped constituent combines only with
/// constituents popped before it, so every combination is tried once.
pub(crate) fn close(chart: &mut Chart, prods: &[Production], model: Option<&PruneModel>, cap: usize) {
    let mut index: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (pi, p) in prods.iter().enumerate() {
        for (pos, c) in p.rhs.iter().enumerate() {
            index.entry(&c.symbol).or_default().push((pi, pos));
        }
    }
    let mut agenda = BinaryHeap::new();
    let push = |agenda: &mut BinaryHeap<_>, chart: &Chart, id: usize| {
        let c = chart.get(id);
        agenda.push(Reverse((c.to, c.from, c.level, id)));
    };
    for id in chart.live_ids().collect::<Vec<_>>() {
        if chart.get(id).level >= 1 {
            push(&mut agenda, chart, id);
        }
    }
    let mut done = vec![false; chart.capacity()];
    let mut live = chart.len();
    while let Some(Reverse((_, _, _, id))) = agenda.pop() {
        done[id] = true;
        let c = chart.get(id).clone();
        let Some(slots) = index.get(c.symbol()) else { continue };
        for &(pi, pos) in slots {
            let p = &prods[pi];
            let mut lefts = Vec::new();
            walk(chart, &done, &p.rhs[..pos], c.from, true, &mut Vec::new(), &mut lefts);
            if lefts.is_empty() {
                continue;
            }
            let mut rights = Vec::new();
            walk(chart, &done, &p.rhs[pos + 1..], c.to, false, &mut Vec::new(), &mut rights);
            for l in &lefts {
                for r in &rights {
                    let children: Vec<Arc<Constituent>> = l
                        .iter()
                        .chain(std::iter::once(&id))
                        .chain(r.iter())
                        .map(|&k| chart.get(k).clone())
                        .collect();
                    let Some(new) = build(p, children, model) else { continue };
                    if live >= cap {
                        chart.truncated = true;
                        return;
                    }
                    if let Some(nid) = chart.insert(new) {
                        live += 1;
                        done.push(false);
                        push(&mut agenda, chart, nid);
                    }
                }
            }
        }
    }
}

/// Enumerates sequences of processed constituents matching `pattern`
/// outward from `v` (leftward when `leftward`). Results are in surface order.
fn walk(
    chart: &Chart,
    done: &[bool],
    pattern: &[Category],
    v: usize,
    leftward: bool,
    acc: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if pattern.is_empty() {
        let mut seq = acc.clone();
        if leftward {
            seq.reverse();
        }
        out.push(seq);
        return;
    }
    let (want, rest, ids): (&Category, &[Category], Vec<usize>) = if leftward {
        let (last, rest) = pattern.split_last().expect("nonempty");
        (last, rest, chart.ending_at(v).collect())
    } else {
        let (first, rest) = pattern.split_first().expect("nonempty");
        (first, rest, chart.starting_at(v).collect())
    };
    for k in ids {
        let c = chart.get(k);
        if !done[k] || c.level == 0 || c.category.symbol != want.symbol {
            continue;
        }
        acc.push(k);
        walk(chart, done, rest, if leftward { c.from } else { c.to }, leftward, acc, out);
        acc.pop();
    }
}

/// One extracted fragment of a stage's best sequence.
#[derive(Clone, Debug, Serialize)]
pub struct Fragment {
    pub from: usize,
    pub to: usize,
    pub category: String,
    pub level: u8,
    pub score: f64,
    pub words: String,
    pub signature: String,
    #[serde(skip)]
    pub node: Arc<Constituent>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageSnapshot {
    pub stage: Stage,
    pub constituents: usize,
    pub total_score: f64,
    pub fragments: Vec<Fragment>,
    /// Edges added by this stage's pass (words for the raw stage).
    pub added: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageOutputs {
    pub stages: Vec<StageSnapshot>,
    pub analyses: Vec<String>,
    pub truncated: bool,
    #[serde(skip)]
    pub chart: Option<Chart>,
}

impl StageOutputs {
    pub fn stage(&self, s: Stage) -> Option<&StageSnapshot> {
        self.stages.iter().find(|x| x.stage == s)
    }
}

/// Best fragment sequence of the chart in its current state.
pub fn snapshot(chart: &Chart, stage: Stage, cfg: &ScoreConfig, added: usize) -> Result<StageSnapshot, ParseError> {
    let (graph, ids) = chart.decode_graph(cfg);
    let path = decoder::best_sequence(&graph, cfg.fragment_penalty)?;
    let fragments = path
        .fragments
        .iter()
        .map(|&e| {
            let c = chart.get(ids[e]);
            Fragment {
                from: c.from,
                to: c.to,
                category: c.category.to_string(),
                level: c.level,
                score: graph.edges[e].score,
                words: c.surface(),
                signature: c.signature(),
                node: c.clone(),
            }
        })
        .collect();
    Ok(StageSnapshot {
        stage,
        constituents: chart.len(),
        total_score: path.total_score,
        fragments,
        added,
    })
}

/// Runs raw, lexical, phrasal and full stages, pruning as configured, and
/// records the best fragment sequence after each.
pub fn parse_staged(
    lattice: &Lattice,
    grammar: &Grammar,
    specialized: Option<&SpecializedGrammar>,
    model: Option<&PruneModel>,
    cfg: &ParseConfig,
) -> Result<StageOutputs, ParseError> {
    parse_staged_with(lattice, grammar, specialized, model, cfg, &mut |_| true)
}

/// As [`parse_staged`], handing each snapshot to `on_stage` as soon as it
/// exists. Returning false stops after that stage.
pub fn parse_staged_with(
    lattice: &Lattice,
    grammar: &Grammar,
    specialized: Option<&SpecializedGrammar>,
    model: Option<&PruneModel>,
    cfg: &ParseConfig,
    on_stage: &mut dyn FnMut(&StageSnapshot) -> bool,
) -> Result<StageOutputs, ParseError> {
    let mut stages = Vec::new();
    let stop = |stages: Vec<StageSnapshot>, chart: Option<Chart>| StageOutputs {
        stages,
        analyses: Vec::new(),
        truncated: chart.as_ref().is_some_and(Chart::truncated),
        chart,
    };
    let raw = Chart::from_lattice(lattice);
    stages.push(snapshot(&raw, Stage::Raw, &cfg.score, raw.len())?);
    if !on_stage(&stages[0]) {
        return Ok(stop(stages, Some(raw)));
    }

    let mut chart = lexical_pass(lattice, grammar, cfg, model)?;
    let mut before = chart.capacity();
    if let Some(m) = model {
        if cfg.prune.plan.contains(&0) {
            pruner::prune(&mut chart, m, &cfg.prune);
        }
    }
    stages.push(snapshot(&chart, Stage::Lexical, &cfg.score, before - raw.len())?);
    if !on_stage(stages.last().expect("just pushed")) {
        return Ok(stop(stages, Some(chart)));
    }

    let mark = chart.capacity();
    phrasal_pass(&mut chart, grammar, cfg, model);
    if let Some(m) = model {
        if cfg.prune.plan.contains(&1) {
            pruner::prune(&mut chart, m, &cfg.prune);
        }
    }
    stages.push(snapshot(&chart, Stage::Phrasal, &cfg.score, chart.capacity() - mark)?);
    if !on_stage(stages.last().expect("just pushed")) {
        return Ok(stop(stages, Some(chart)));
    }
    before = chart.capacity();

    match (cfg.engine, specialized) {
        (Engine::Lr, Some(spec)) => {
            let found = crate::lr::glr_parse_chart(&chart, spec.table(), spec, model, cfg.max_constituents);
            for c in found {
                chart.insert(c);
            }
            chart.advance(Stage::Full);
        }
        (_, Some(spec)) => full_parse(&mut chart, spec.productions(), cfg, model),
        (_, None) => {
            let prods: Vec<Production> = grammar.non_phrasal_rules().map(Production::from_rule).collect();
            full_parse(&mut chart, &prods, cfg, model);
        }
    }
    stages.push(snapshot(&chart, Stage::Full, &cfg.score, chart.capacity() - before)?);
    on_stage(stages.last().expect("just pushed"));

    let mut analyses: Vec<String> = chart.analyses(&grammar.start).iter().map(|c| c.signature()).collect();
    analyses.sort();
    Ok(StageOutputs {
        stages,
        analyses,
        truncated: chart.truncated(),
        chart: Some(chart),
    })
}

/// Full-span analyses of a linear sentence under the original grammar
/// without pruning, as sorted signatures.
pub fn analyses_of(
    words: &str,
    grammar: &Grammar,
    specialized: Option<&SpecializedGrammar>,
    engine: Engine,
) -> Result<Vec<Arc<Constituent>>, ParseError> {
    let lattice = crate::lattice::linear_lattice(words, 0.0)
        .map_err(|e| ParseError::BadDerivation(e.to_string()))?;
    let cfg = ParseConfig {
        engine,
        ..ParseConfig::default()
    };
    let mut chart = lexical_pass(&lattice, grammar, &cfg, None)?;
    phrasal_pass(&mut chart, grammar, &cfg, None);
    match (engine, specialized) {
        (Engine::Lr, Some(spec)) => {
            return Ok(crate::lr::glr_parse(&chart, spec.table(), spec, None, cfg.max_constituents)
                .analyses
                .into_iter()
                .filter(|c| c.category.symbol == grammar.start.symbol && unify(&grammar.start.features, c.bindings()).is_some())
                .collect());
        }
        (_, Some(spec)) => full_parse(&mut chart, spec.productions(), &cfg, None),
        (_, None) => {
            let prods: Vec<Production> = grammar.non_phrasal_rules().map(Production::from_rule).collect();
            full_parse(&mut chart, &prods, &cfg, None);
        }
    }
    Ok(chart.analyses(&grammar.start))
}

/// Rebuilds a derivation from its signature over a linear sentence starting
/// at vertex `from`, re-checking every rule application.
pub fn from_signature(sig: &SExpr, grammar: &Grammar, unknown_tag: &str, from: usize) -> Result<Arc<Constituent>, ParseError> {
    let bad = |m: String| ParseError::BadDerivation(m);
    match sig {
        SExpr::Atom(leaf) => {
            let (word, rest) = leaf
                .rsplit_once('/')
                .ok_or_else(|| bad(format!("leaf `{leaf}` lacks a tag")))?;
            let (tag, sense) = match rest.split_once('#') {
                Some((t, k)) => (t, k.parse::<usize>().map_err(|_| bad(format!("bad sense in `{leaf}`")))?),
                None => (rest, 0),
            };
            let word_arc: Arc<str> = Arc::from(word);
            match grammar.lookup(word).nth(sense) {
                Some((_, e)) if e.tag == tag => Ok(Arc::new(Constituent {
                    from,
                    to: from + 1,
                    category: e.category.clone(),
                    derivation: Derivation::Lex {
                        word: word_arc,
                        tag: Arc::from(tag),
                        sem: Arc::from(e.sem.as_str()),
                        sense,
                    },
                    level: 1,
                    acoustic: 0.0,
                    linguistic: 0.0,
                })),
                None if sense == 0 && tag == unknown_tag && grammar.lookup(word).next().is_none() => {
                    Ok(Arc::new(unknown(from, from + 1, word_arc, tag, 0.0)))
                }
                _ => Err(bad(format!("no lexicon entry for `{leaf}`"))),
            }
        }
        SExpr::List(items) => {
            let (head, rest) = items.split_first().ok_or_else(|| bad("empty node".into()))?;
            let id = head.as_atom().ok_or_else(|| bad("node without rule id".into()))?;
            let rule = grammar.rule(id).ok_or_else(|| bad(format!("unknown rule `{id}`")))?;
            if rule.rhs.len() != rest.len() {
                return Err(bad(format!("rule `{id}` takes {} daughters", rule.rhs.len())));
            }
            let mut at = from;
            let mut children = Vec::with_capacity(rest.len());
            for s in rest {
                let c = from_signature(s, grammar, unknown_tag, at)?;
                at = c.to;
                children.push(c);
            }
            build(&Production::from_rule(rule), children, None)
                .map(Arc::new)
                .ok_or_else(|| bad(format!("rule `{id}` does not apply")))
        }
    }
}
