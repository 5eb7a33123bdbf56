//! Word lattices and n-best conflation.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("empty input")]
    Empty,
    #[error("lattice needs at least two vertices")]
    TooFewVertices,
    #[error("edge {from}->{to} is not strictly forward or out of range")]
    BadEdge { from: usize, to: usize },
    #[error("edge {from}->{to} has an empty word")]
    EmptyWord { from: usize, to: usize },
    #[error("duplicate edge {from}->{to} `{word}`")]
    Duplicate { from: usize, to: usize, word: String },
    #[error("acoustic score {0} is positive")]
    PositiveScore(f64),
    #[error("no path from start to end")]
    Disconnected,
    #[error("bad n-best line {line}: {message}")]
    NBest { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeEdge {
    pub from: usize,
    pub to: usize,
    pub word: String,
    pub acoustic: f64,
}

/// A word lattice over vertices `0..vertices`; start is 0, end is the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLattice")]
pub struct Lattice {
    vertices: usize,
    edges: Vec<LatticeEdge>,
}

#[derive(Deserialize)]
struct RawLattice {
    vertices: usize,
    edges: Vec<LatticeEdge>,
}

impl TryFrom<RawLattice> for Lattice {
    type Error = LatticeError;
    fn try_from(r: RawLattice) -> Result<Self, LatticeError> {
        Lattice::new(r.vertices, r.edges)
    }
}

impl Lattice {
    pub fn new(vertices: usize, mut edges: Vec<LatticeEdge>) -> Result<Lattice, LatticeError> {
        if vertices < 2 {
            return Err(LatticeError::TooFewVertices);
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.from >= e.to || e.to >= vertices {
                return Err(LatticeError::BadEdge {
                    from: e.from,
                    to: e.to,
                });
            }
            if e.word.is_empty() {
                return Err(LatticeError::EmptyWord {
                    from: e.from,
                    to: e.to,
                });
            }
            if e.acoustic > 0.0 {
                return Err(LatticeError::PositiveScore(e.acoustic));
            }
            if !seen.insert((e.from, e.to, e.word.clone())) {
                return Err(LatticeError::Duplicate {
                    from: e.from,
                    to: e.to,
                    word: e.word.clone(),
                });
            }
        }
        edges.sort_by(|a, b| (a.from, a.to, &a.word).cmp(&(b.from, b.to, &b.word)));
        let lattice = Lattice { vertices, edges };
        if !lattice.connected() {
            return Err(LatticeError::Disconnected);
        }
        Ok(lattice)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn end(&self) -> usize {
        self.vertices - 1
    }

    pub fn edges(&self) -> &[LatticeEdge] {
        &self.edges
    }

    fn connected(&self) -> bool {
        let mut reach = vec![false; self.vertices];
        reach[0] = true;
        for e in &self.edges {
            if reach[e.from] {
                reach[e.to] = true;
            }
        }
        reach[self.end()]
    }

    /// Every start-to-end word sequence. Exponential; meant for small lattices.
    pub fn paths(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.walk(0, &mut stack, &mut out);
        out
    }

    fn walk(&self, v: usize, stack: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if v == self.end() {
            out.push(stack.clone());
            return;
        }
        for e in self.edges.iter().filter(|e| e.from == v) {
            stack.push(e.word.clone());
            self.walk(e.to, stack, out);
            stack.pop();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("lattice serializes")
    }
}

/// Builds a lattice with one edge per whitespace-separated word.
pub fn linear_lattice(text: &str, default_score: f64) -> Result<Lattice, LatticeError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(LatticeError::Empty);
    }
    let edges = words
        .iter()
        .enumerate()
        .map(|(i, w)| LatticeEdge {
            from: i,
            to: i + 1,
            word: w.to_string(),
            acoustic: default_score,
        })
        .collect();
    Lattice::new(words.len() + 1, edges)
}

/// Parses `<score>\t<sentence>` lines.
pub fn parse_nbest(text: &str) -> Result<Vec<(String, f64)>, LatticeError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (score, sentence) = line.split_once('\t').ok_or_else(|| LatticeError::NBest {
            line: i + 1,
            message: "expected <score>\\t<sentence>".into(),
        })?;
        let score: f64 = score.trim().parse().map_err(|_| LatticeError::NBest {
            line: i + 1,
            message: format!("bad score `{score}`"),
        })?;
        out.push((sentence.trim().to_string(), score));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Op {
    // declaration order is the tie-break preference
    Match(usize),
    Subst(usize),
    Insert,
    Delete(usize),
}

/// Mutable lattice under construction; vertex ids are not yet topological.
struct Builder {
    next_vertex: usize,
    start: usize,
    end: usize,
    edges: BTreeMap<(usize, usize, String), f64>,
}

impl Builder {
    fn seed(words: &[&str], share: f64) -> Builder {
        let mut edges = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            edges.insert((i, i + 1, w.to_string()), share);
        }
        Builder {
            next_vertex: words.len() + 1,
            start: 0,
            end: words.len(),
            edges,
        }
    }

    fn topo_order(&self) -> Vec<usize> {
        let mut indeg: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.next_vertex {
            indeg.entry(v).or_insert(0);
        }
        for (from, to, _) in self.edges.keys() {
            *indeg.entry(*to).or_insert(0) += 1;
            out.entry(*from).or_default().push(*to);
        }
        let live: BTreeSet<usize> = self
            .edges
            .keys()
            .flat_map(|(f, t, _)| [*f, *t])
            .collect();
        let mut heap: BinaryHeap<Reverse<usize>> = indeg
            .iter()
            .filter(|(v, d)| **d == 0 && live.contains(v))
            .map(|(v, _)| Reverse(*v))
            .collect();
        let mut order = Vec::new();
        while let Some(Reverse(v)) = heap.pop() {
            order.push(v);
            for &w in out.get(&v).into_iter().flatten() {
                let d = indeg.get_mut(&w).unwrap();
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse(w));
                }
            }
        }
        order
    }

    /// Minimum-edit alignment of `words` against the best-matching path.
    /// Returns ops in order plus, for each op, the lattice vertex it starts at.
    fn align(&self, words: &[&str]) -> Vec<(Op, usize)> {
        let order = self.topo_order();
        let edge_list: Vec<(&(usize, usize, String), usize)> =
            self.edges.iter().enumerate().map(|(i, (k, _))| (k, i)).collect();
        let m = words.len();
        const INF: usize = usize::MAX / 4;
        // cost[(v, j)] and back pointers
        let mut cost: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut back: BTreeMap<(usize, usize), (Op, usize, usize)> = BTreeMap::new();
        cost.insert((self.start, 0), 0);
        let relax = |cost: &mut BTreeMap<(usize, usize), usize>,
                     back: &mut BTreeMap<(usize, usize), (Op, usize, usize)>,
                     to: (usize, usize),
                     c: usize,
                     op: Op,
                     from: (usize, usize)| {
            let cur = cost.get(&to).copied().unwrap_or(INF);
            let better = c < cur
                || (c == cur && back.get(&to).is_some_and(|(o, fv, fj)| (op, from.0, from.1) < (*o, *fv, *fj)));
            if better {
                cost.insert(to, c);
                back.insert(to, (op, from.0, from.1));
            }
        };
        for &v in &order {
            for j in 0..=m {
                let Some(&c) = cost.get(&(v, j)) else { continue };
                if j < m {
                    relax(&mut cost, &mut back, (v, j + 1), c + 1, Op::Insert, (v, j));
                }
                for (key, idx) in edge_list.iter().filter(|(k, _)| k.0 == v) {
                    let w = key.1;
                    relax(&mut cost, &mut back, (w, j), c + 1, Op::Delete(*idx), (v, j));
                    if j < m {
                        if key.2 == words[j] {
                            relax(&mut cost, &mut back, (w, j + 1), c, Op::Match(*idx), (v, j));
                        } else {
                            relax(&mut cost, &mut back, (w, j + 1), c + 1, Op::Subst(*idx), (v, j));
                        }
                    }
                }
            }
            // insertions at the same vertex can chain; the inner loop over j
            // visits them in increasing j so a single pass suffices
        }
        let mut ops = Vec::new();
        let mut at = (self.end, m);
        while at != (self.start, 0) {
            let (op, v, j) = back[&at];
            ops.push((op, v));
            at = (v, j);
        }
        ops.reverse();
        ops
    }

    fn add(&mut self, from: usize, to: usize, word: &str, share: f64) {
        let e = self
            .edges
            .entry((from, to, word.to_string()))
            .or_insert(f64::NEG_INFINITY);
        *e = e.max(share);
    }

    fn merge(&mut self, words: &[&str], share: f64) {
        let ops = self.align(words);
        let keys: Vec<(usize, usize, String)> = self.edges.keys().cloned().collect();
        // (is insertion, lattice vertex reached when the word's op begins)
        let mut word_ops: Vec<(bool, usize)> = Vec::with_capacity(words.len());
        let mut lv = self.start;
        for (op, _) in ops {
            match op {
                Op::Delete(idx) => lv = keys[idx].1,
                Op::Match(idx) | Op::Subst(idx) => {
                    word_ops.push((false, lv));
                    lv = keys[idx].1;
                }
                Op::Insert => word_ops.push((true, lv)),
            }
        }
        // Boundary vertices: aligned words meet at lattice vertices, inserted
        // words get fresh vertices.
        let m = words.len();
        let mut chain = vec![self.start; m + 1];
        chain[m] = self.end;
        for j in 1..m {
            let prev_inserted = word_ops[j - 1].0;
            let (inserted, at) = word_ops[j];
            chain[j] = if prev_inserted || (inserted && at == self.end) {
                let x = self.next_vertex;
                self.next_vertex += 1;
                x
            } else {
                at
            };
        }
        for j in 0..m {
            self.add(chain[j], chain[j + 1], words[j], share);
        }
    }

    fn finish(self) -> Result<Lattice, LatticeError> {
        let order = self.topo_order();
        let rank: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let edges = self
            .edges
            .into_iter()
            .map(|((f, t, w), a)| LatticeEdge {
                from: rank[&f],
                to: rank[&t],
                word: w,
                acoustic: a,
            })
            .collect();
        Lattice::new(order.len(), edges)
    }
}

/// Aligns and conflates up to `n_max` recognizer hypotheses into one lattice.
///
/// Hypotheses are merged in descending score order (stable for ties); only
/// the top `n_max` are used. Each hypothesis's total score is shared equally
/// among its words and an edge keeps the maximum share over the hypotheses
/// that use it.
pub fn conflate_nbest(hypotheses: &[(String, f64)], n_max: usize) -> Result<Lattice, LatticeError> {
    let mut hyps: Vec<(Vec<&str>, f64)> = hypotheses
        .iter()
        .map(|(s, score)| (s.split_whitespace().collect::<Vec<_>>(), *score))
        .filter(|(w, _)| !w.is_empty())
        .collect();
    if hyps.is_empty() {
        return Err(LatticeError::Empty);
    }
    hyps.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    hyps.truncate(n_max.max(1));
    let share = |h: &(Vec<&str>, f64)| h.1 / h.0.len() as f64;
    let mut builder = Builder::seed(&hyps[0].0, share(&hyps[0]));
    for h in &hyps[1..] {
        builder.merge(&h.0, share(h));
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joined(l: &Lattice) -> BTreeSet<String> {
        l.paths().into_iter().map(|p| p.join(" ")).collect()
    }

    #[test]
    fn linear_counts() {
        let l = linear_lattice("show me flights", -1.0).unwrap();
        assert_eq!(l.vertex_count(), 4);
        assert_eq!(l.edges().len(), 3);
        let l = linear_lattice("x", -1.0).unwrap();
        assert_eq!(l.vertex_count(), 2);
        assert_eq!(l.edges().len(), 1);
        assert_eq!(linear_lattice("   ", 0.0), Err(LatticeError::Empty));
    }

    #[test]
    fn single_hypothesis_is_linear() {
        let l = conflate_nbest(&[("show me flights".into(), -3.0)], 5).unwrap();
        assert_eq!(l, linear_lattice("show me flights", -1.0).unwrap());
    }

    #[test]
    fn optional_word_becomes_branch() {
        let l = conflate_nbest(
            &[("show me flights".into(), -3.0), ("show me the flights".into(), -6.0)],
            5,
        )
        .unwrap();
        let paths = joined(&l);
        assert!(paths.contains("show me flights"));
        assert!(paths.contains("show me the flights"));
        // shared prefix edges are not duplicated
        assert_eq!(l.edges().iter().filter(|e| e.word == "show").count(), 1);
        assert_eq!(l.edges().iter().filter(|e| e.word == "me").count(), 1);
        let the = l.edges().iter().find(|e| e.word == "the").unwrap();
        assert_eq!(the.acoustic, -1.5);
    }

    #[test]
    fn shared_edges_keep_max_share() {
        let l = conflate_nbest(
            &[("show flights".into(), -2.0), ("show fares".into(), -4.0)],
            5,
        )
        .unwrap();
        let show = l.edges().iter().find(|e| e.word == "show").unwrap();
        assert_eq!(show.acoustic, -1.0);
        assert_eq!(joined(&l).len(), 2);
    }

    #[test]
    fn trailing_and_leading_insertions() {
        let hyps = vec![
            ("show flights".to_string(), -1.0),
            ("show flights please".to_string(), -2.0),
            ("please show flights".to_string(), -3.0),
            ("flights".to_string(), -4.0),
        ];
        let l = conflate_nbest(&hyps, 5).unwrap();
        let paths = joined(&l);
        for (h, _) in &hyps {
            assert!(paths.contains(h), "{h} missing from {paths:?}");
        }
    }

    #[test]
    fn empty_hypotheses_rejected() {
        assert_eq!(conflate_nbest(&[], 5), Err(LatticeError::Empty));
    }

    #[test]
    fn only_top_n_used() {
        let hyps: Vec<(String, f64)> = (0..7).map(|i| (format!("w{i}"), -(i as f64))).collect();
        let l = conflate_nbest(&hyps, 5).unwrap();
        assert_eq!(l.paths().len(), 5);
    }

    #[test]
    fn json_round_trip_validates() {
        let l = linear_lattice("a b", -0.5).unwrap();
        let back: Lattice = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(back, l);
        let bad = r#"{"vertices":3,"edges":[{"from":1,"to":0,"word":"a","acoustic":0}]}"#;
        assert!(serde_json::from_str::<Lattice>(bad).is_err());
    }
}
