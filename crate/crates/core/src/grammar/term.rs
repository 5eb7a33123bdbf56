//! Flat feature terms and their unification.
//!
//! A term is a sorted list of `feature=value` pairs where a value is either an
//! atom or a variable. Variables are plain integers; two terms share a
//! variable namespace only when they are unified directly with [`unify`].
//! Rule application renames every participant apart first.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Atom(Arc<str>),
    Var(u32),
}

impl Value {
    pub fn atom(s: &str) -> Self {
        Value::Atom(Arc::from(s))
    }

    fn shifted(&self, offset: u32) -> Value {
        match self {
            Value::Var(v) => Value::Var(v + offset),
            a => a.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => f.write_str(a),
            Value::Var(v) => write!(f, "V{v}"),
        }
    }
}

/// A flat feature term. Feature names are unique and kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FeatureTerm {
    feats: Vec<(Arc<str>, Value)>,
}

impl FeatureTerm {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a term from pairs. Returns `None` when a feature name repeats.
    pub fn from_pairs<I, S>(pairs: I) -> Option<Self>
    where
        I: IntoIterator<Item = (S, Value)>,
        S: AsRef<str>,
    {
        let mut feats: Vec<(Arc<str>, Value)> = pairs
            .into_iter()
            .map(|(k, v)| (Arc::from(k.as_ref()), v))
            .collect();
        feats.sort_by(|a, b| a.0.cmp(&b.0));
        if feats.windows(2).any(|w| w[0].0 == w[1].0) {
            return None;
        }
        Some(FeatureTerm { feats })
    }

    /// Parses the bracketed surface form, e.g. `[num=sg, case=C]`.
    /// Uppercase-initial values are variables, numbered in order of first
    /// appearance within this term.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut names = BTreeMap::new();
        parse_term_body(text.trim(), &mut names)
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.feats
            .binary_search_by(|(k, _)| k.as_ref().cmp(name))
            .ok()
            .map(|i| &self.feats[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.feats.iter().map(|(k, v)| (k.as_ref(), v))
    }

    /// One past the largest variable id used, 0 when ground.
    pub fn var_span(&self) -> u32 {
        self.feats
            .iter()
            .filter_map(|(_, v)| match v {
                Value::Var(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn is_ground(&self) -> bool {
        self.feats.iter().all(|(_, v)| matches!(v, Value::Atom(_)))
    }

    /// Renumbers variables in order of first occurrence.
    pub fn canonical(&self) -> FeatureTerm {
        let mut map: Vec<(u32, u32)> = Vec::new();
        let feats = self
            .feats
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Var(i) => {
                        let next = map.len() as u32;
                        let id = match map.iter().find(|(old, _)| old == i) {
                            Some(&(_, new)) => new,
                            None => {
                                map.push((*i, next));
                                next
                            }
                        };
                        Value::Var(id)
                    }
                    a => a.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        FeatureTerm { feats }
    }

    pub(crate) fn shifted(&self, offset: u32) -> FeatureTerm {
        if offset == 0 {
            return self.clone();
        }
        FeatureTerm {
            feats: self
                .feats
                .iter()
                .map(|(k, v)| (k.clone(), v.shifted(offset)))
                .collect(),
        }
    }

    pub(crate) fn resolved(&self, subst: &Subst) -> FeatureTerm {
        FeatureTerm {
            feats: self
                .feats
                .iter()
                .map(|(k, v)| (k.clone(), subst.resolve(v)))
                .collect(),
        }
    }
}

impl fmt::Display for FeatureTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (k, v)) in self.feats.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("]")
    }
}

impl From<FeatureTerm> for String {
    fn from(t: FeatureTerm) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for FeatureTerm {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        FeatureTerm::parse(&s)
    }
}

pub(crate) fn parse_term_body(
    text: &str,
    names: &mut BTreeMap<String, u32>,
) -> Result<FeatureTerm, String> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| format!("feature term must be bracketed: {text}"))?;
    let mut pairs = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected feature=value, found `{part}`"))?;
        let (k, v) = (k.trim(), v.trim());
        if !is_ident(k) {
            return Err(format!("bad feature name `{k}`"));
        }
        if !is_ident(v) {
            return Err(format!("bad feature value `{v}`"));
        }
        let value = if v.starts_with(|c: char| c.is_ascii_uppercase()) {
            let next = names.len() as u32;
            Value::Var(*names.entry(v.to_string()).or_insert(next))
        } else {
            Value::atom(v)
        };
        pairs.push((k.to_string(), value));
    }
    FeatureTerm::from_pairs(pairs).ok_or_else(|| format!("duplicate feature in {text}"))
}

pub(crate) fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == '\'')
}

/// Dense substitution over variable ids.
#[derive(Debug, Default, Clone)]
pub(crate) struct Subst {
    slots: Vec<Option<Value>>,
}

impl Subst {
    pub(crate) fn with_capacity(n: u32) -> Self {
        Subst {
            slots: vec![None; n as usize],
        }
    }

    fn slot(&mut self, v: u32) -> &mut Option<Value> {
        let i = v as usize;
        if i >= self.slots.len() {
            self.slots.resize(i + 1, None);
        }
        &mut self.slots[i]
    }

    pub(crate) fn resolve(&self, v: &Value) -> Value {
        let mut cur = v.clone();
        while let Value::Var(i) = cur {
            match self.slots.get(i as usize).and_then(|s| s.as_ref()) {
                Some(next) => cur = next.clone(),
                None => return Value::Var(i),
            }
        }
        cur
    }

    pub(crate) fn unify_values(&mut self, a: &Value, b: &Value) -> bool {
        let (a, b) = (self.resolve(a), self.resolve(b));
        match (&a, &b) {
            (Value::Atom(x), Value::Atom(y)) => x == y,
            (Value::Var(x), Value::Var(y)) if x == y => true,
            (Value::Var(x), Value::Var(y)) => {
                // bind the larger id to the smaller so results are order-independent
                let (lo, hi) = if x < y { (*x, *y) } else { (*y, *x) };
                *self.slot(hi) = Some(Value::Var(lo));
                true
            }
            (Value::Var(x), atom) | (atom, Value::Var(x)) => {
                *self.slot(*x) = Some(atom.clone());
                true
            }
        }
    }

    /// Unifies the shared features of `pattern` and `term`.
    pub(crate) fn unify_terms(&mut self, pattern: &FeatureTerm, term: &FeatureTerm) -> bool {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&pattern.feats, &term.feats);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    if !self.unify_values(&a[i].1, &b[j].1) {
                        return false;
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        true
    }
}

/// Result of a successful [`unify`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unified {
    pub term: FeatureTerm,
    /// Every variable of the inputs that became bound, with its final value.
    pub bindings: BTreeMap<u32, Value>,
}

/// Unifies two flat terms that share one variable namespace.
///
/// Returns `None` when two atoms clash. The result holds the union of the
/// features with the substitution applied.
pub fn unify(a: &FeatureTerm, b: &FeatureTerm) -> Option<Unified> {
    let mut subst = Subst::with_capacity(a.var_span().max(b.var_span()));
    if !subst.unify_terms(a, b) {
        return None;
    }
    let mut feats: Vec<(Arc<str>, Value)> = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.feats.len() || j < b.feats.len() {
        let take_a = match (a.feats.get(i), b.feats.get(j)) {
            (Some(x), Some(y)) => x.0 <= y.0,
            (Some(_), None) => true,
            _ => false,
        };
        if take_a {
            let (k, v) = &a.feats[i];
            if b.feats.get(j).is_some_and(|y| &y.0 == k) {
                j += 1;
            }
            feats.push((k.clone(), subst.resolve(v)));
            i += 1;
        } else {
            let (k, v) = &b.feats[j];
            feats.push((k.clone(), subst.resolve(v)));
            j += 1;
        }
    }
    let mut bindings = BTreeMap::new();
    for var in 0..subst.slots.len() as u32 {
        let r = subst.resolve(&Value::Var(var));
        if r != Value::Var(var) {
            bindings.insert(var, r);
        }
    }
    Some(Unified {
        term: FeatureTerm { feats },
        bindings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> FeatureTerm {
        FeatureTerm::parse(s).unwrap()
    }

    #[test]
    fn identical_atoms_unify() {
        let u = unify(&t("[num=sg]"), &t("[num=sg]")).unwrap();
        assert_eq!(u.term, t("[num=sg]"));
        assert!(u.bindings.is_empty());
    }

    #[test]
    fn atom_clash_fails() {
        assert!(unify(&t("[num=sg]"), &t("[num=pl]")).is_none());
    }

    #[test]
    fn variable_gets_bound() {
        let a = t("[num=N]");
        let b = t("[num=pl, case=obj]");
        let u = unify(&a, &b).unwrap();
        assert_eq!(u.term, t("[case=obj, num=pl]"));
        assert_eq!(u.bindings.get(&0), Some(&Value::atom("pl")));
    }

    #[test]
    fn shared_variable_propagates() {
        let a = t("[agr=X, num=X]");
        let b = t("[num=sg]");
        let u = unify(&a, &b).unwrap();
        assert_eq!(u.term.get("agr"), Some(&Value::atom("sg")));
        assert!(unify(&a, &t("[agr=pl, num=sg]")).is_none());
    }

    #[test]
    fn parse_rejects_duplicates_and_garbage() {
        assert!(FeatureTerm::parse("[a=b, a=c]").is_err());
        assert!(FeatureTerm::parse("a=b").is_err());
        assert!(FeatureTerm::parse("[a]").is_err());
    }

    #[test]
    fn canonical_renumbers() {
        let term = FeatureTerm::from_pairs([("b", Value::Var(7)), ("a", Value::Var(3))]).unwrap();
        let c = term.canonical();
        assert_eq!(c.get("a"), Some(&Value::Var(0)));
        assert_eq!(c.get("b"), Some(&Value::Var(1)));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            prop::sample::select(vec!["sg", "pl", "obj", "subj"]).prop_map(Value::atom),
            (0u32..3).prop_map(Value::Var),
        ]
    }

    fn arb_term() -> impl Strategy<Value = FeatureTerm> {
        prop::collection::btree_map(
            prop::sample::select(vec!["num", "case", "per", "vform"]),
            arb_value(),
            0..4,
        )
        .prop_map(|m| FeatureTerm::from_pairs(m).unwrap())
    }

    proptest! {
        #[test]
        fn unify_is_commutative(a in arb_term(), b in arb_term()) {
            let ab = unify(&a, &b);
            let ba = unify(&b, &a);
            prop_assert_eq!(ab.is_some(), ba.is_some());
            if let (Some(x), Some(y)) = (ab, ba) {
                prop_assert_eq!(x.term.canonical(), y.term.canonical());
            }
        }

        #[test]
        fn empty_is_identity(a in arb_term()) {
            let u = unify(&a, &FeatureTerm::empty()).unwrap();
            prop_assert_eq!(u.term, a);
        }
    }
}
