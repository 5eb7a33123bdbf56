//! Feature-constraint grammar: categories, rules, lexicon.
//!
//! Rules are split into a phrasal set (level 1, applied as-is) and a
//! non-phrasal set (levels 2 and up) that grammar specialization chunks into
//! macro-rules.

mod dsl;
mod term;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dsl::{load_document, load_grammar, Document, MacroDecl, SpecializedHeader};
pub use term::{unify, FeatureTerm, Unified, Value};

pub(crate) use term::Subst;

/// Category used for words missing from the lexicon.
pub const UNKNOWN_CATEGORY: &str = "UNK";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("undeclared category {name} at line {line}, column {col}")]
    UndeclaredCategory { name: String, line: usize, col: usize },
    #[error("undeclared tag {name} at line {line}, column {col}")]
    UndeclaredTag { name: String, line: usize, col: usize },
    #[error("duplicate rule id {id} at line {line}")]
    DuplicateRule { id: String, line: usize },
    #[error("missing header: {0}")]
    MissingHeader(&'static str),
    #[error("no rule derives the start category {0}")]
    NoStartRule(String),
    #[error("invalid rule {id}: {message}")]
    InvalidRule { id: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub symbol: Arc<str>,
    pub features: FeatureTerm,
}

impl Category {
    pub fn new(symbol: &str, features: FeatureTerm) -> Self {
        Category {
            symbol: Arc::from(symbol),
            features,
        }
    }

    pub fn bare(symbol: &str) -> Self {
        Self::new(symbol, FeatureTerm::empty())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.features.is_empty() {
            f.write_str(&self.symbol)
        } else {
            write!(f, "{}{}", self.symbol, self.features)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Phrasal,
    NonPhrasal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub id: Arc<str>,
    pub lhs: Category,
    pub rhs: Vec<Category>,
    pub kind: RuleKind,
    /// 1 for phrasal rules, 2 and up otherwise.
    pub level: u8,
    /// Index of the head daughter (0-based).
    pub head: usize,
    /// Marks relation-introducing constituents (prepositional phrases and the
    /// like) for semantic triples.
    pub rel: bool,
    pub(crate) var_count: u32,
}

impl Rule {
    pub fn new(
        id: &str,
        lhs: Category,
        rhs: Vec<Category>,
        kind: RuleKind,
        level: u8,
    ) -> Rule {
        let mut rule = Rule {
            id: Arc::from(id),
            lhs,
            rhs,
            kind,
            level,
            head: 0,
            rel: false,
            var_count: 0,
        };
        rule.canonicalize_vars();
        rule
    }

    /// Applies the rule to the daughters' bindings; `None` on a clash.
    pub fn apply(&self, children: &[&FeatureTerm]) -> Option<FeatureTerm> {
        apply_shape(&self.lhs.features, &self.rhs, self.var_count, children)
    }

    /// Renumbers variables by first occurrence over lhs then rhs.
    pub(crate) fn canonicalize_vars(&mut self) {
        let mut map: HashMap<u32, u32> = HashMap::new();
        let mut renumber = |t: &FeatureTerm| -> FeatureTerm {
            let pairs: Vec<(String, Value)> = t
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        Value::Var(i) => {
                            let next = map.len() as u32;
                            Value::Var(*map.entry(*i).or_insert(next))
                        }
                        a => a.clone(),
                    };
                    (k.to_string(), v)
                })
                .collect();
            FeatureTerm::from_pairs(pairs).expect("names already unique")
        };
        self.lhs.features = renumber(&self.lhs.features);
        for c in &mut self.rhs {
            c.features = renumber(&c.features);
        }
        self.var_count = map.len() as u32;
    }
}

/// Instantiates a rule shape against daughter bindings. Every daughter is
/// renamed apart from the rule and from its siblings before unification; the
/// resulting mother term is returned in canonical variable order.
pub(crate) fn apply_shape(
    lhs: &FeatureTerm,
    rhs: &[Category],
    var_count: u32,
    children: &[&FeatureTerm],
) -> Option<FeatureTerm> {
    debug_assert_eq!(rhs.len(), children.len());
    let total: u32 = var_count + children.iter().map(|c| c.var_span()).sum::<u32>();
    let mut subst = Subst::with_capacity(total);
    let mut offset = var_count;
    for (pattern, child) in rhs.iter().zip(children) {
        let span = child.var_span();
        let ok = if span == 0 {
            subst.unify_terms(&pattern.features, child)
        } else {
            subst.unify_terms(&pattern.features, &child.shifted(offset))
        };
        if !ok {
            return None;
        }
        offset += span;
    }
    Some(lhs.resolved(&subst).canonical())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub surface: String,
    pub category: Category,
    pub tag: String,
    pub sem: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    pub name: Option<String>,
    pub categories: BTreeSet<String>,
    pub tags: BTreeSet<String>,
    pub start: Category,
    pub rules: Vec<Rule>,
    pub lexicon: Vec<LexEntry>,
    pub transfer: Vec<crate::translator::TransferRule>,
    lex_index: HashMap<String, Vec<usize>>,
}

impl Grammar {
    pub(crate) fn assemble(
        name: Option<String>,
        categories: BTreeSet<String>,
        tags: BTreeSet<String>,
        start: Category,
        rules: Vec<Rule>,
        lexicon: Vec<LexEntry>,
        transfer: Vec<crate::translator::TransferRule>,
    ) -> Grammar {
        let mut lex_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in lexicon.iter().enumerate() {
            lex_index.entry(e.surface.clone()).or_default().push(i);
        }
        Grammar {
            name,
            categories,
            tags,
            start,
            rules,
            lexicon,
            transfer,
            lex_index,
        }
    }

    /// Stable identifier: the declared name, else a content digest.
    pub fn id(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => {
                use sha2::{Digest, Sha256};
                let digest = Sha256::digest(self.serialize().as_bytes());
                digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
            }
        }
    }

    pub fn lookup(&self, surface: &str) -> impl Iterator<Item = (usize, &LexEntry)> {
        self.lex_index
            .get(surface)
            .into_iter()
            .flatten()
            .map(move |&i| (i, &self.lexicon[i]))
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| &*r.id == id)
    }

    pub fn phrasal_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Phrasal)
    }

    pub fn non_phrasal_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::NonPhrasal)
    }

    /// Most frequent tag among a word's entries, first declared on ties.
    pub fn best_tag(&self, surface: &str) -> Option<&str> {
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for (_, e) in self.lookup(surface) {
            match counts.iter_mut().find(|(t, _)| *t == e.tag) {
                Some(c) => c.1 += 1,
                None => counts.push((&e.tag, 1)),
            }
        }
        let mut best: Option<(&str, usize)> = None;
        for (t, n) in counts {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((t, n));
            }
        }
        best.map(|(t, _)| t)
    }

    /// True when every rule only consumes categories whose producing rules
    /// sit at the same or a lower level. Leveled chart parsing and the LR
    /// driver agree on stratified grammars.
    pub fn is_stratified(&self) -> bool {
        let mut max_level: HashMap<&str, u8> = HashMap::new();
        for r in &self.rules {
            let e = max_level.entry(&r.lhs.symbol).or_insert(0);
            *e = (*e).max(r.level);
        }
        self.rules.iter().all(|r| {
            r.rhs
                .iter()
                .all(|c| max_level.get(&*c.symbol).is_none_or(|&l| l <= r.level))
        })
    }

    pub fn serialize(&self) -> String {
        dsl::serialize(self)
    }

    pub fn max_level(&self) -> u8 {
        self.rules.iter().map(|r| r.level).max().unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_application_binds_agreement() {
        let g = load_grammar(
            "categories: NP Det Noun\ntags: DT NN\nstart: NP\n\
             rule r1: NP[num=N] -> Det[num=N] Noun[num=N] phrasal\n",
        )
        .unwrap();
        let r = &g.rules[0];
        let sg = FeatureTerm::parse("[num=sg]").unwrap();
        let pl = FeatureTerm::parse("[num=pl]").unwrap();
        assert_eq!(r.apply(&[&sg, &sg]), Some(sg.clone()));
        assert_eq!(r.apply(&[&sg, &pl]), None);
        // a daughter without the feature leaves it open
        let open = FeatureTerm::empty();
        assert_eq!(r.apply(&[&open, &pl]), Some(pl));
        let both_open = r.apply(&[&open, &open]).unwrap();
        assert_eq!(both_open.get("num"), Some(&Value::Var(0)));
    }

    #[test]
    fn daughters_are_renamed_apart() {
        let g = load_grammar(
            "categories: X A\ntags: T\nstart: X\n\
             rule r: X[p=P, q=Q] -> A[v=P] A[v=Q] level=2\n",
        )
        .unwrap();
        let r = &g.rules[0];
        // both daughters carry an unbound V0; they must stay distinct
        let open = FeatureTerm::parse("[v=V]").unwrap();
        let out = r.apply(&[&open, &open]).unwrap();
        assert_eq!(out.get("p"), Some(&Value::Var(0)));
        assert_eq!(out.get("q"), Some(&Value::Var(1)));
    }
}
