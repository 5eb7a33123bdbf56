//! Discriminant statistics and constituent pruning.
//!
//! A constituent is summarised by its own discriminant (category plus the
//! words it covers) and by pair discriminants built from the tags of its
//! chart neighbours. Training counts how often each discriminant was created
//! while re-parsing treebank sentences and how often the constituent ended up
//! in an approved analysis.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::chart::{self, Chart, Constituent, ParseConfig};
use crate::grammar::Grammar;
use crate::lattice::linear_lattice;
use crate::sexpr::SExpr;
use crate::treebanker::TreebankEntry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminantKind {
    Constituent,
    Pair,
    Triple,
    Mood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Friendliness {
    User,
    System,
    Both,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Discriminant {
    pub kind: DiscriminantKind,
    pub key: String,
    pub friendliness: Friendliness,
}

impl Discriminant {
    pub fn new(kind: DiscriminantKind, key: String) -> Self {
        let friendliness = match kind {
            DiscriminantKind::Pair => Friendliness::System,
            _ => Friendliness::User,
        };
        Discriminant { kind, key, friendliness }
    }
}

/// `NP:the flights to boston`
pub fn constituent_key(c: &Constituent) -> String {
    format!("{}:{}", c.symbol(), c.surface().to_lowercase())
}

/// `pair:(VB,NP)`: left item first.
pub fn pair_key(left: &str, right: &str) -> String {
    format!("pair:({left},{right})")
}

/// The constituent discriminant plus one pair discriminant per distinct
/// neighbour tag on each side.
pub fn extract_discriminants(c: &Constituent, left: &[&Constituent], right: &[&Constituent]) -> Vec<Discriminant> {
    let mut out = vec![Discriminant::new(DiscriminantKind::Constituent, constituent_key(c))];
    let own = c.neighbour_tag();
    let mut pairs = BTreeSet::new();
    for l in left {
        pairs.insert(pair_key(l.neighbour_tag(), own));
    }
    for r in right {
        pairs.insert(pair_key(own, r.neighbour_tag()));
    }
    out.extend(pairs.into_iter().map(|k| Discriminant::new(DiscriminantKind::Pair, k)));
    out
}

/// Discriminants of a live chart constituent against its live level-1+
/// neighbours.
pub fn chart_discriminants(chart: &Chart, id: usize) -> Vec<Discriminant> {
    let c = chart.get(id);
    let left: Vec<&Constituent> = chart
        .ending_at(c.from)
        .map(|k| chart.get(k).as_ref())
        .filter(|k| k.level >= 1)
        .collect();
    let right: Vec<&Constituent> = chart
        .starting_at(c.to)
        .map(|k| chart.get(k).as_ref())
        .filter(|k| k.level >= 1)
        .collect();
    extract_discriminants(c, &left, &right)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminantStats {
    pub created: u64,
    pub successes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub theta_own: f64,
    pub theta_pair: f64,
    /// Levels after which pruning runs: 0 lexical, 1 phrasal, k rule level k.
    pub plan: BTreeSet<u8>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            theta_own: 0.02,
            theta_pair: 0.02,
            plan: [0, 1].into_iter().collect(),
        }
    }
}

impl PruneConfig {
    pub fn disabled() -> Self {
        PruneConfig {
            theta_own: 0.0,
            theta_pair: 0.0,
            plan: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (n, t) in [("theta_own", self.theta_own), ("theta_pair", self.theta_pair)] {
            if !(0.0..1.0).contains(&t) {
                return Err(format!("{n} must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneModel {
    pub alpha: f64,
    pub corpus: String,
    pub stats: BTreeMap<String, (DiscriminantKind, DiscriminantStats)>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("missing header record")]
    MissingHeader,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    alpha: f64,
    corpus: String,
}

#[derive(Serialize, Deserialize)]
struct StatRecord {
    key: String,
    kind: DiscriminantKind,
    created: u64,
    successes: u64,
}

impl PruneModel {
    pub fn new(alpha: f64, corpus: &str) -> Self {
        assert!(alpha > 0.0, "alpha must be positive");
        PruneModel {
            alpha,
            corpus: corpus.to_string(),
            stats: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> DiscriminantStats {
        self.stats.get(key).map(|s| s.1).unwrap_or_default()
    }

    /// (successes + α) / (created + 2α); 0.5 for unseen keys.
    pub fn smoothed(&self, key: &str) -> f64 {
        let s = self.get(key);
        (s.successes as f64 + self.alpha) / (s.created as f64 + 2.0 * self.alpha)
    }

    pub fn log_own(&self, c: &Constituent) -> f64 {
        self.smoothed(&constituent_key(c)).ln()
    }

    pub fn record(&mut self, d: &Discriminant, success: bool) {
        let e = self
            .stats
            .entry(d.key.clone())
            .or_insert((d.kind, DiscriminantStats::default()));
        e.1.created += 1;
        if success {
            e.1.successes += 1;
        }
    }

    /// Adds another model's counts (shards of one corpus).
    pub fn merge(&mut self, other: &PruneModel) {
        for (k, (kind, s)) in &other.stats {
            let e = self.stats.entry(k.clone()).or_insert((*kind, DiscriminantStats::default()));
            e.1.created += s.created;
            e.1.successes += s.successes;
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderRecord {
            alpha: self.alpha,
            corpus: self.corpus.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for (key, (kind, s)) in &self.stats {
            let rec = StatRecord {
                key: key.clone(),
                kind: *kind,
                created: s.created,
                successes: s.successes,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(ModelError::MissingHeader)?;
        let header: HeaderRecord = serde_json::from_str(first).map_err(|_| ModelError::MissingHeader)?;
        if !(header.alpha > 0.0) {
            return Err(ModelError::Format {
                line: 1,
                message: "alpha must be positive".into(),
            });
        }
        let mut model = PruneModel::new(header.alpha, &header.corpus);
        for (i, l) in lines {
            let rec: StatRecord = serde_json::from_str(l).map_err(|e| ModelError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rec.successes > rec.created {
                return Err(ModelError::Format {
                    line: i + 1,
                    message: "successes exceed created".into(),
                });
            }
            model.stats.insert(
                rec.key,
                (
                    rec.kind,
                    DiscriminantStats {
                        created: rec.created,
                        successes: rec.successes,
                    },
                ),
            );
        }
        Ok(model)
    }
}

/// Removes unpromising constituents, worst first, unless the removal would
/// leave no start-to-end path of level-1+ constituents. Returns the removed
/// chart ids in removal order.
pub fn prune(chart: &mut Chart, model: &PruneModel, cfg: &PruneConfig) -> Vec<usize> {
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for id in chart.live_ids().collect::<Vec<_>>() {
        if chart.get(id).level == 0 {
            continue;
        }
        let ds = chart_discriminants(chart, id);
        let own = model.smoothed(&ds[0].key);
        let pairs: Vec<f64> = ds[1..].iter().map(|d| model.smoothed(&d.key)).collect();
        let pair_max = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let own_bad = own < cfg.theta_own;
        let pair_bad = !pairs.is_empty() && pair_max < cfg.theta_pair;
        if own_bad || pair_bad {
            let score = if pairs.is_empty() { own } else { own.min(pair_max) };
            candidates.push((score, id));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut removed = Vec::new();
    for (_, id) in candidates {
        chart.remove(id);
        if connected(chart) {
            removed.push(id);
        } else {
            chart.revive(id);
        }
    }
    removed
}

/// Start-to-end reachability over live level-1+ constituents.
pub fn connected(chart: &Chart) -> bool {
    let n = chart.vertex_count();
    let mut reach = vec![false; n];
    reach[0] = true;
    for v in 0..n {
        if !reach[v] {
            continue;
        }
        for id in chart.starting_at(v) {
            let c = chart.get(id);
            if c.level >= 1 {
                reach[c.to] = true;
            }
        }
    }
    reach[n - 1]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub sentences: usize,
    pub used: usize,
    /// (sentence id, reason) for entries the grammar cannot reproduce.
    pub flagged: Vec<(u64, String)>,
}

/// Re-parses each treebank sentence without pruning and counts the
/// discriminants of every constituent in the final chart.
pub fn train(entries: &[TreebankEntry], grammar: &Grammar, corpus: &str, alpha: f64) -> (PruneModel, TrainReport) {
    let mut model = PruneModel::new(alpha, corpus);
    let mut report = TrainReport {
        sentences: entries.len(),
        ..TrainReport::default()
    };
    let cfg = ParseConfig {
        prune: PruneConfig::disabled(),
        ..ParseConfig::default()
    };
    for entry in entries {
        match count_entry(entry, grammar, &cfg, &mut model) {
            Ok(()) => report.used += 1,
            Err(why) => report.flagged.push((entry.id, why)),
        }
    }
    (model, report)
}

fn count_entry(entry: &TreebankEntry, grammar: &Grammar, cfg: &ParseConfig, model: &mut PruneModel) -> Result<(), String> {
    if entry.approved.is_empty() {
        return Err("no approved analysis".into());
    }
    let lattice = linear_lattice(&entry.text, 0.0).map_err(|e| e.to_string())?;
    let mut chart = chart::lexical_pass(&lattice, grammar, cfg, None).map_err(|e| e.to_string())?;
    chart::phrasal_pass(&mut chart, grammar, cfg, None);
    let prods: Vec<chart::Production> = grammar.non_phrasal_rules().map(chart::Production::from_rule).collect();
    chart::full_parse(&mut chart, &prods, cfg, None);
    let found: HashSet<String> = chart.analyses(&grammar.start).iter().map(|c| c.signature()).collect();
    let mut good: HashSet<(usize, usize, String)> = HashSet::new();
    for sig in &entry.approved {
        if !found.contains(sig) {
            return Err(format!("approved analysis not reproduced: {sig}"));
        }
        let tree = SExpr::parse(sig).map_err(|e| e.to_string())?;
        let root = chart::from_signature(&tree, grammar, &cfg.unknown_tag, 0).map_err(|e| e.to_string())?;
        for n in root.subtree() {
            good.insert((n.from, n.to, n.signature()));
        }
    }
    for id in chart.live_ids().collect::<Vec<_>>() {
        let c = chart.get(id);
        if c.level == 0 {
            continue;
        }
        let success = good.contains(&(c.from, c.to, c.signature()));
        for d in chart_discriminants(&chart, id) {
            model.record(&d, success);
        }
    }
    Ok(())
}
