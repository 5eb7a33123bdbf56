//! SLR(1) tables over the specialized grammar's backbone and a GLR driver.
//!
//! The backbone erases features. Categories read from the chart's phrasal
//! layer become terminals `#C`; when a macro-rule can also build `C`, an
//! injection production `C -> #C` connects the two. Conflicts stay in the
//! table as multi-action cells and the driver follows every action, checking
//! feature constraints when it reduces.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::rc::Rc;
use std::sync::Arc;

use serde::Serialize;

use crate::chart::{build, Chart, Constituent};
use crate::ebl::SpecializedGrammar;
use crate::pruner::PruneModel;

pub const END_MARKER: &str = "$";
const AUGMENTED: &str = "^start";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Origin {
    Accept,
    /// Index into the specialized grammar's macro list.
    Macro(usize),
    /// `C -> #C`
    Inject,
    /// Plain backbone production (tests and tools).
    Plain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BackboneProduction {
    pub name: String,
    pub lhs: String,
    pub rhs: Vec<String>,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Shift(usize),
    Reduce(usize),
    Accept,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LrTable {
    pub productions: Vec<BackboneProduction>,
    /// Item sets as (production, dot) pairs, sorted.
    pub states: Vec<Vec<(usize, usize)>>,
    pub actions: BTreeMap<(usize, String), BTreeSet<Action>>,
    pub gotos: BTreeMap<(usize, String), usize>,
    nonterminals: BTreeSet<String>,
}

impl LrTable {
    /// Builds the SLR(1) table. Symbols that head no production are
    /// terminals. Production 0 must be the augmented start production.
    pub fn build(productions: Vec<BackboneProduction>) -> LrTable {
        let nonterminals: BTreeSet<String> = productions.iter().map(|p| p.lhs.clone()).collect();
        let by_lhs = {
            let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in productions.iter().enumerate() {
                m.entry(&p.lhs).or_default().push(i);
            }
            m
        };
        let closure = |kernel: &BTreeSet<(usize, usize)>| -> BTreeSet<(usize, usize)> {
            let mut set = kernel.clone();
            let mut queue: VecDeque<(usize, usize)> = kernel.iter().copied().collect();
            while let Some((p, d)) = queue.pop_front() {
                if let Some(sym) = productions[p].rhs.get(d) {
                    for &q in by_lhs.get(sym.as_str()).into_iter().flatten() {
                        if set.insert((q, 0)) {
                            queue.push_back((q, 0));
                        }
                    }
                }
            }
            set
        };
        let follow = follow_sets(&productions, &nonterminals);

        let mut states: Vec<BTreeSet<(usize, usize)>> = Vec::new();
        let mut index: HashMap<BTreeSet<(usize, usize)>, usize> = HashMap::new();
        let mut actions: BTreeMap<(usize, String), BTreeSet<Action>> = BTreeMap::new();
        let mut gotos = BTreeMap::new();
        let start = closure(&[(0, 0)].into_iter().collect());
        index.insert(start.clone(), 0);
        states.push(start);
        let mut k = 0;
        while k < states.len() {
            let items = states[k].clone();
            let mut moves: BTreeMap<&str, BTreeSet<(usize, usize)>> = BTreeMap::new();
            for &(p, d) in &items {
                let prod = &productions[p];
                match prod.rhs.get(d) {
                    Some(sym) => {
                        moves.entry(sym).or_default().insert((p, d + 1));
                    }
                    None if prod.origin == Origin::Accept => {
                        actions
                            .entry((k, END_MARKER.to_string()))
                            .or_default()
                            .insert(Action::Accept);
                    }
                    None => {
                        for t in follow.get(&prod.lhs).into_iter().flatten() {
                            actions.entry((k, t.clone())).or_default().insert(Action::Reduce(p));
                        }
                    }
                }
            }
            for (sym, kernel) in moves {
                let target = closure(&kernel);
                let id = match index.get(&target) {
                    Some(&id) => id,
                    None => {
                        let id = states.len();
                        index.insert(target.clone(), id);
                        states.push(target);
                        id
                    }
                };
                if nonterminals.contains(sym) {
                    gotos.insert((k, sym.to_string()), id);
                } else {
                    actions.entry((k, sym.to_string())).or_default().insert(Action::Shift(id));
                }
            }
            k += 1;
        }
        LrTable {
            productions,
            states: states.into_iter().map(|s| s.into_iter().collect()).collect(),
            actions,
            gotos,
            nonterminals,
        }
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn action(&self, state: usize, terminal: &str) -> impl Iterator<Item = &Action> {
        self.actions.get(&(state, terminal.to_string())).into_iter().flatten()
    }

    pub fn goto(&self, state: usize, nonterminal: &str) -> Option<usize> {
        self.gotos.get(&(state, nonterminal.to_string())).copied()
    }

    /// Cells holding more than one action.
    pub fn conflicts(&self) -> Vec<(usize, String)> {
        self.actions
            .iter()
            .filter(|(_, a)| a.len() > 1)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn is_nonterminal(&self, sym: &str) -> bool {
        self.nonterminals.contains(sym)
    }

    pub fn dump(&self) -> TableDump {
        let item = |&(p, d): &(usize, usize)| {
            let prod = &self.productions[p];
            let mut rhs: Vec<&str> = prod.rhs.iter().map(String::as_str).collect();
            rhs.insert(d, ".");
            format!("{} -> {}", prod.lhs, rhs.join(" "))
        };
        TableDump {
            productions: self
                .productions
                .iter()
                .map(|p| format!("{}: {} -> {}", p.name, p.lhs, p.rhs.join(" ")))
                .collect(),
            states: self
                .states
                .iter()
                .enumerate()
                .map(|(id, items)| StateDump {
                    id,
                    items: items.iter().map(item).collect(),
                })
                .collect(),
            actions: self
                .actions
                .iter()
                .map(|((s, t), acts)| CellDump {
                    state: *s,
                    symbol: t.clone(),
                    actions: acts
                        .iter()
                        .map(|a| match a {
                            Action::Shift(n) => format!("s{n}"),
                            Action::Reduce(p) => format!("r:{}", self.productions[*p].name),
                            Action::Accept => "acc".to_string(),
                        })
                        .collect(),
                })
                .collect(),
            gotos: self
                .gotos
                .iter()
                .map(|((s, n), t)| GotoDump {
                    state: *s,
                    symbol: n.clone(),
                    target: *t,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("table dump serializes")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TableDump {
    pub productions: Vec<String>,
    pub states: Vec<StateDump>,
    pub actions: Vec<CellDump>,
    pub gotos: Vec<GotoDump>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateDump {
    pub id: usize,
    pub items: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellDump {
    pub state: usize,
    pub symbol: String,
    pub actions: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GotoDump {
    pub state: usize,
    pub symbol: String,
    pub target: usize,
}

/// FOLLOW sets; every right-hand side is nonempty, so FIRST needs no
/// nullable handling.
fn follow_sets(prods: &[BackboneProduction], nts: &BTreeSet<String>) -> HashMap<String, BTreeSet<String>> {
    let mut first: HashMap<String, BTreeSet<String>> = nts.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
    let first_of = |first: &HashMap<String, BTreeSet<String>>, sym: &str| -> BTreeSet<String> {
        match first.get(sym) {
            Some(s) => s.clone(),
            None => [sym.to_string()].into_iter().collect(),
        }
    };
    loop {
        let mut changed = false;
        for p in prods {
            let f = first_of(&first, &p.rhs[0]);
            let e = first.get_mut(&p.lhs).expect("lhs is a nonterminal");
            let before = e.len();
            e.extend(f);
            changed |= e.len() != before;
        }
        if !changed {
            break;
        }
    }
    let mut follow: HashMap<String, BTreeSet<String>> = nts.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
    follow.get_mut(&prods[0].lhs).expect("start").insert(END_MARKER.to_string());
    loop {
        let mut changed = false;
        for p in prods {
            for (i, sym) in p.rhs.iter().enumerate() {
                if !nts.contains(sym) {
                    continue;
                }
                let add: BTreeSet<String> = match p.rhs.get(i + 1) {
                    Some(next) => first_of(&first, next),
                    None => follow[&p.lhs].clone(),
                };
                let e = follow.get_mut(sym).expect("nonterminal");
                let before = e.len();
                e.extend(add);
                changed |= e.len() != before;
            }
        }
        if !changed {
            break;
        }
    }
    follow
}

fn terminal(sym: &str) -> String {
    format!("#{sym}")
}

/// Backbone of a specialized grammar: augmented start, macro-rules in order,
/// then injections sorted by category.
pub fn backbone(spec: &SpecializedGrammar) -> Vec<BackboneProduction> {
    let lhs_set: BTreeSet<&str> = spec.macros.iter().map(|m| &*m.lhs.symbol).collect();
    let sym = |c: &str| {
        if lhs_set.contains(c) {
            c.to_string()
        } else {
            terminal(c)
        }
    };
    let mut prods = vec![BackboneProduction {
        name: "accept".into(),
        lhs: AUGMENTED.into(),
        rhs: vec![sym(&spec.start.symbol)],
        origin: Origin::Accept,
    }];
    for (i, m) in spec.macros.iter().enumerate() {
        prods.push(BackboneProduction {
            name: m.id.clone(),
            lhs: m.lhs.symbol.to_string(),
            rhs: m.rhs.iter().map(|c| sym(&c.symbol)).collect(),
            origin: Origin::Macro(i),
        });
    }
    for c in spec.input_categories() {
        if lhs_set.contains(c.as_str()) {
            prods.push(BackboneProduction {
                name: format!("inject:{c}"),
                lhs: c.clone(),
                rhs: vec![terminal(c)],
                origin: Origin::Inject,
            });
        }
    }
    prods
}

/// Compiles the specialized grammar; a pure function of its input.
pub fn compile_lr(spec: &SpecializedGrammar) -> LrTable {
    LrTable::build(backbone(spec))
}

struct Node {
    state: usize,
    vertex: usize,
    value: Option<Arc<Constituent>>,
    prev: Option<Rc<Node>>,
}

#[derive(Clone, Debug, Default)]
pub struct GlrOutput {
    /// Full-span analyses, one per accepting stack.
    pub analyses: Vec<Arc<Constituent>>,
    /// Every constituent a successful reduce built, in creation order.
    pub built: Vec<Arc<Constituent>>,
    /// True when the driver hit the stack cap.
    pub truncated: bool,
}

/// Drives the table over the chart's lexical and phrasal constituents.
pub fn glr_parse(chart: &Chart, table: &LrTable, spec: &SpecializedGrammar, model: Option<&PruneModel>, cap: usize) -> GlrOutput {
    let n = chart.vertex_count();
    let end = n - 1;
    let tokens: Vec<Vec<Arc<Constituent>>> = (0..n)
        .map(|v| {
            chart
                .starting_at(v)
                .map(|i| chart.get(i).clone())
                .filter(|c| (1..=2).contains(&c.level))
                .collect()
        })
        .collect();
    let lookahead: Vec<BTreeSet<String>> = (0..n)
        .map(|v| {
            let mut s: BTreeSet<String> = tokens[v].iter().map(|c| terminal(c.symbol())).collect();
            if v == end {
                s.insert(END_MARKER.to_string());
            }
            s
        })
        .collect();
    let prods: Vec<_> = spec.productions().to_vec();
    let mut out = GlrOutput::default();
    let mut buckets: Vec<Vec<Rc<Node>>> = (0..n).map(|_| Vec::new()).collect();
    buckets[0].push(Rc::new(Node {
        state: 0,
        vertex: 0,
        value: None,
        prev: None,
    }));
    let mut created = 0usize;
    for v in 0..n {
        let mut work: VecDeque<Rc<Node>> = std::mem::take(&mut buckets[v]).into();
        while let Some(top) = work.pop_front() {
            created += 1;
            if created > cap {
                out.truncated = true;
                return out;
            }
            // reductions licensed by any lookahead at this vertex
            let mut reduces = BTreeSet::new();
            for t in &lookahead[v] {
                for a in table.action(top.state, t) {
                    match a {
                        Action::Reduce(p) => {
                            reduces.insert(*p);
                        }
                        Action::Accept if v == end => {
                            if let Some(val) = &top.value {
                                out.analyses.push(val.clone());
                            }
                        }
                        _ => {}
                    }
                }
            }
            for p in reduces {
                let prod = &table.productions[p];
                let mut kids = Vec::with_capacity(prod.rhs.len());
                let mut base = top.clone();
                for _ in 0..prod.rhs.len() {
                    kids.push(base.value.clone().expect("non-bottom node carries a value"));
                    base = base.prev.clone().expect("stack deep enough");
                }
                kids.reverse();
                let value = match prod.origin {
                    Origin::Macro(i) => match build(&prods[i], kids, model) {
                        Some(c) => {
                            let c = Arc::new(c);
                            out.built.push(c.clone());
                            c
                        }
                        None => continue,
                    },
                    _ => kids.pop().expect("unary"),
                };
                let Some(state) = table.goto(base.state, &prod.lhs) else { continue };
                work.push_back(Rc::new(Node {
                    state,
                    vertex: v,
                    value: Some(value),
                    prev: Some(base),
                }));
            }
            for c in &tokens[v] {
                for a in table.action(top.state, &terminal(c.symbol())) {
                    if let Action::Shift(s) = a {
                        buckets[c.to].push(Rc::new(Node {
                            state: *s,
                            vertex: c.to,
                            value: Some(c.clone()),
                            prev: Some(top.clone()),
                        }));
                    }
                }
            }
            debug_assert_eq!(top.vertex, v);
        }
    }
    out
}

/// Constituents for the chart after a GLR pass: every built constituent
/// once, keyed by span and derivation.
pub fn glr_parse_chart(
    chart: &Chart,
    table: &LrTable,
    spec: &SpecializedGrammar,
    model: Option<&PruneModel>,
    cap: usize,
) -> Vec<Constituent> {
    let out = glr_parse(chart, table, spec, model, cap);
    let mut seen = HashSet::new();
    out.built
        .iter()
        .filter(|c| seen.insert((c.from, c.to, c.signature())))
        .map(|c| (**c).clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(rules: &[(&str, &[&str])], start: &str) -> LrTable {
        let mut prods = vec![BackboneProduction {
            name: "accept".into(),
            lhs: AUGMENTED.into(),
            rhs: vec![start.into()],
            origin: Origin::Accept,
        }];
        for (i, (l, r)) in rules.iter().enumerate() {
            prods.push(BackboneProduction {
                name: format!("p{}", i + 1),
                lhs: l.to_string(),
                rhs: r.iter().map(|s| s.to_string()).collect(),
                origin: Origin::Plain,
            });
        }
        LrTable::build(prods)
    }

    #[test]
    fn minimal_table() {
        let t = plain(&[("S", &["a"])], "S");
        assert_eq!(t.state_count(), 3);
        assert!(t.conflicts().is_empty());
        let s = t.action(0, "a").next().cloned();
        let Some(Action::Shift(k)) = s else { panic!("expected shift") };
        let g = t.goto(0, "S").unwrap();
        assert!(t.action(g, END_MARKER).any(|a| *a == Action::Accept));
        assert!(t.action(k, END_MARKER).any(|a| matches!(a, Action::Reduce(1))));
    }

    #[test]
    fn left_recursion_alone_is_slr() {
        let t = plain(&[("S", &["S", "a"]), ("S", &["a"])], "S");
        assert!(t.conflicts().is_empty());
    }

    #[test]
    fn ambiguous_concatenation_keeps_both_actions() {
        let t = plain(&[("S", &["S", "S"]), ("S", &["a"])], "S");
        let conflicts = t.conflicts();
        assert!(!conflicts.is_empty());
        let (s, sym) = &conflicts[0];
        let cell: Vec<&Action> = t.action(*s, sym).collect();
        assert_eq!(cell.len(), 2);
        assert!(cell.iter().any(|a| matches!(a, Action::Shift(_))));
        assert!(cell.iter().any(|a| matches!(a, Action::Reduce(_))));
    }

    #[test]
    fn compile_is_deterministic() {
        let rules: &[(&str, &[&str])] = &[("S", &["NP", "VP"]), ("VP", &["v", "NP"]), ("NP", &["n"]), ("NP", &["NP", "p", "NP"])];
        let a = plain(rules, "S");
        let b = plain(rules, "S");
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }
}
