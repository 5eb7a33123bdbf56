//! Predicate-argument trees and semantic triples.
//!
//! A tree is read off a derivation: every rule picks a head daughter whose
//! tree becomes the mother's; the other daughters are attached as arguments
//! on the side they occurred, labelled with their lowercased category.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chart::{Constituent, Derivation};
use crate::grammar::Grammar;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PaTree {
    pub pred: String,
    /// Label given by the parent; empty at the root.
    pub role: String,
    /// Relation-introducing node (e.g. a preposition with its object).
    pub rel: bool,
    pub args: Vec<PaTree>,
    /// Number of arguments that precede the head in source order.
    pub head_pos: usize,
}

impl PaTree {
    pub fn leaf(pred: &str) -> Self {
        PaTree {
            pred: pred.to_string(),
            role: String::new(),
            rel: false,
            args: Vec::new(),
            head_pos: 0,
        }
    }

    /// Builds the tree of a derivation. Rule ids missing from `grammar`
    /// (macro-rules) must have been expanded first; unknown ids fall back to
    /// head 0.
    pub fn from_constituent(c: &Constituent, grammar: &Grammar) -> PaTree {
        match &c.derivation {
            Derivation::Word(w) => PaTree::leaf(w),
            Derivation::Lex { sem, .. } => PaTree::leaf(sem),
            Derivation::Rule { rule, children } => {
                let (head, rel) = grammar
                    .rule(rule)
                    .map(|r| (r.head, r.rel))
                    .unwrap_or((0, false));
                let head = head.min(children.len() - 1);
                let mut tree = PaTree::from_constituent(&children[head], grammar);
                let arg = |k: usize| {
                    let mut t = PaTree::from_constituent(&children[k], grammar);
                    t.role = children[k].category.symbol.to_lowercase();
                    t
                };
                let left: Vec<PaTree> = (0..head).map(arg).collect();
                let right: Vec<PaTree> = (head + 1..children.len()).map(arg).collect();
                tree.head_pos += left.len();
                let mut args = left;
                args.append(&mut tree.args);
                args.extend(right);
                tree.args = args;
                tree.rel |= rel;
                tree
            }
        }
    }

    /// Head, modifier and dependent triples, e.g. `flight+to+boston`.
    /// Relational arguments contribute their own predicate as the relation;
    /// others contribute their role.
    pub fn triples(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_triples(&mut out);
        out
    }

    fn collect_triples(&self, out: &mut Vec<String>) {
        for a in &self.args {
            match (a.rel, a.args.last()) {
                (true, Some(dep)) => out.push(format!("{}+{}+{}", self.pred, a.pred, dep.pred)),
                _ => out.push(format!("{}+{}+{}", self.pred, a.role, a.pred)),
            }
            a.collect_triples(out);
        }
    }

    /// Predicates in source order.
    pub fn linearize(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.args[..self.head_pos] {
            out.extend(a.linearize());
        }
        out.push(self.pred.clone());
        for a in &self.args[self.head_pos..] {
            out.extend(a.linearize());
        }
        out
    }

    /// Parses the compact notation used by `Display`:
    /// `flight(det:the, *, @pp:to(np:boston))`. `*` marks the head position
    /// (default first), `@` marks a relational argument.
    pub fn parse(text: &str) -> Result<PaTree, String> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut pos = 0;
        let t = parse_node(&chars, &mut pos)?;
        if pos != chars.len() {
            return Err(format!("trailing input in `{text}`"));
        }
        Ok(t)
    }
}

fn parse_node(s: &[char], pos: &mut usize) -> Result<PaTree, String> {
    let mut rel = false;
    if s.get(*pos) == Some(&'@') {
        rel = true;
        *pos += 1;
    }
    let mut name = read_ident(s, pos);
    let mut role = String::new();
    if s.get(*pos) == Some(&':') {
        *pos += 1;
        role = name;
        name = read_ident(s, pos);
    }
    if name.is_empty() {
        return Err(format!("expected predicate at {pos}"));
    }
    let mut t = PaTree::leaf(&name);
    t.role = role;
    t.rel = rel;
    if s.get(*pos) == Some(&'(') {
        *pos += 1;
        let mut star = None;
        loop {
            if s.get(*pos) == Some(&'*') {
                *pos += 1;
                star = Some(t.args.len());
            } else {
                t.args.push(parse_node(s, pos)?);
            }
            match s.get(*pos) {
                Some(',') => *pos += 1,
                Some(')') => {
                    *pos += 1;
                    break;
                }
                _ => return Err(format!("expected `,` or `)` at {pos}")),
            }
        }
        t.head_pos = star.unwrap_or(0);
    }
    Ok(t)
}

fn read_ident(s: &[char], pos: &mut usize) -> String {
    let start = *pos;
    while *pos < s.len() && !matches!(s[*pos], '(' | ')' | ',' | ':' | '*' | '@') {
        *pos += 1;
    }
    s[start..*pos].iter().collect()
}

impl fmt::Display for PaTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rel {
            f.write_str("@")?;
        }
        if !self.role.is_empty() {
            write!(f, "{}:", self.role)?;
        }
        f.write_str(&self.pred)?;
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !std::mem::take(&mut first) {
                f.write_str(", ")?;
            }
            Ok(())
        };
        for (i, a) in self.args.iter().enumerate() {
            if i == self.head_pos && i > 0 {
                sep(f)?;
                f.write_str("*")?;
            }
            sep(f)?;
            write!(f, "{a}")?;
        }
        if self.head_pos == self.args.len() {
            sep(f)?;
            f.write_str("*")?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notation_round_trips() {
        for s in [
            "show(np:you, np:flight(det:the))",
            "flight(det:the, adj:cheap, *, @pp:to(np:boston))",
            "x",
            "f(a:b, *)",
        ] {
            let t = PaTree::parse(s).unwrap();
            assert_eq!(t.to_string(), s);
        }
        let t = PaTree::parse("flight(det:the, adj:cheap, *)").unwrap();
        assert_eq!(t.head_pos, 2);
        assert_eq!(t.linearize(), vec!["the", "cheap", "flight"]);
    }

    #[test]
    fn triples_use_relation_predicate() {
        let t = PaTree::parse("show(np:flight(*, @pp:to(np:boston)))").unwrap();
        assert_eq!(
            t.triples(),
            vec!["show+np+flight", "flight+to+boston", "to+np+boston"]
        );
    }
}
