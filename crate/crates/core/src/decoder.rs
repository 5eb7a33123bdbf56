//! Stack decoder: best contiguous fragment sequence over a vertex DAG.
//!
//! Search is best-first over partial paths. The completion estimate for a
//! vertex is the exact best suffix score, computed by one backward sweep, so
//! the first complete path popped is optimal and further pops enumerate
//! paths in order.
//!
//! Paths are ranked by total score, then by fewer fragments, then by the
//! lexicographically smallest list of `(from, to, edge)` triples.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("no start-to-end path through the chart")]
    Disconnected,
    #[error("n must be at least 1")]
    ZeroN,
}

/// Linear score combination for chart edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub w_acoustic: f64,
    pub w_linguistic: f64,
    /// Subtracted once per fragment.
    pub fragment_penalty: f64,
    /// Bonus indexed by constituent level; levels past the end use the last.
    pub level_bonus: Vec<f64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            w_acoustic: 1.0,
            w_linguistic: 1.0,
            fragment_penalty: 1.0,
            // every bonus stays below the fragment penalty, so one deep
            // fragment beats any split of the same span
            level_bonus: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

impl ScoreConfig {
    /// Configuration for the translation side: raw edge scores, no bonuses.
    pub fn translation() -> Self {
        ScoreConfig {
            w_acoustic: 0.0,
            w_linguistic: 1.0,
            fragment_penalty: 1.0,
            level_bonus: vec![0.0],
        }
    }

    pub fn bonus(&self, level: u8) -> f64 {
        match self.level_bonus.get(level as usize) {
            Some(b) => *b,
            None => self.level_bonus.last().copied().unwrap_or(0.0),
        }
    }

    pub fn edge_score(&self, acoustic: f64, linguistic: f64, level: u8) -> f64 {
        self.w_acoustic * acoustic + self.w_linguistic * linguistic + self.bonus(level)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_acoustic.is_finite() && self.w_linguistic.is_finite()) {
            return Err("weights must be finite".into());
        }
        if !(self.fragment_penalty >= 0.0) {
            return Err("fragment penalty must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeEdge {
    pub from: usize,
    pub to: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeGraph {
    pub vertex_count: usize,
    pub edges: Vec<DecodeEdge>,
}

impl DecodeGraph {
    pub fn new(vertex_count: usize) -> Self {
        DecodeGraph {
            vertex_count,
            edges: Vec::new(),
        }
    }

    pub fn push(&mut self, from: usize, to: usize, score: f64) -> usize {
        debug_assert!(from < to && to < self.vertex_count);
        self.edges.push(DecodeEdge { from, to, score });
        self.edges.len() - 1
    }

    pub fn end(&self) -> usize {
        self.vertex_count.saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentPath {
    /// Edge indices in path order.
    pub fragments: Vec<usize>,
    pub total_score: f64,
}

type Span = (usize, usize, usize);

#[derive(Clone, Debug)]
struct Key {
    score: f64,
    frags: usize,
    spans: Vec<Span>,
}

impl Key {
    fn better_than(&self, other: &Key) -> bool {
        self.cmp_rank(other) == Ordering::Greater
    }

    /// Greater is better.
    fn cmp_rank(&self, other: &Key) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.frags.cmp(&self.frags))
            .then_with(|| other.spans.cmp(&self.spans))
    }
}

struct Entry {
    key: Key,
    vertex: usize,
    prefix: Vec<usize>,
    g: f64,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.key.cmp_rank(&o.key)
    }
}

struct Decoder<'a> {
    graph: &'a DecodeGraph,
    penalty: f64,
    out: Vec<Vec<usize>>,
    suffix: Vec<Option<(f64, usize, Vec<usize>)>>,
}

impl<'a> Decoder<'a> {
    fn new(graph: &'a DecodeGraph, penalty: f64) -> Self {
        let mut out = vec![Vec::new(); graph.vertex_count];
        for (i, e) in graph.edges.iter().enumerate() {
            out[e.from].push(i);
        }
        let mut d = Decoder {
            graph,
            penalty,
            out,
            suffix: Vec::new(),
        };
        d.sweep();
        d
    }

    fn value(&self, edge: usize) -> f64 {
        self.graph.edges[edge].score - self.penalty
    }

    fn spans(&self, edges: &[usize]) -> Vec<Span> {
        edges
            .iter()
            .map(|&i| (self.graph.edges[i].from, self.graph.edges[i].to, i))
            .collect()
    }

    /// Backward sweep computing the best suffix from every vertex.
    fn sweep(&mut self) {
        let n = self.graph.vertex_count;
        let mut suffix: Vec<Option<(f64, usize, Vec<usize>)>> = vec![None; n];
        if n == 0 {
            self.suffix = suffix;
            return;
        }
        suffix[n - 1] = Some((0.0, 0, Vec::new()));
        for v in (0..n - 1).rev() {
            let mut best: Option<Key> = None;
            let mut best_edges = Vec::new();
            for &e in &self.out[v] {
                let to = self.graph.edges[e].to;
                let Some((s, f, rest)) = &suffix[to] else { continue };
                let mut edges = Vec::with_capacity(rest.len() + 1);
                edges.push(e);
                edges.extend_from_slice(rest);
                let key = Key {
                    score: self.value(e) + s,
                    frags: f + 1,
                    spans: self.spans(&edges),
                };
                if best.as_ref().is_none_or(|b| key.better_than(b)) {
                    best = Some(key);
                    best_edges = edges;
                }
            }
            suffix[v] = best.map(|k| (k.score, k.frags, best_edges));
        }
        self.suffix = suffix;
    }

    fn entry(&self, vertex: usize, prefix: Vec<usize>, g: f64) -> Option<Entry> {
        let (s, _, rest) = self.suffix[vertex].as_ref()?;
        let mut all = prefix.clone();
        all.extend_from_slice(rest);
        let key = Key {
            score: g + s,
            frags: all.len(),
            spans: self.spans(&all),
        };
        Some(Entry {
            key,
            vertex,
            prefix,
            g,
        })
    }

    fn search(&self, n: usize) -> Vec<FragmentPath> {
        let mut heap = BinaryHeap::new();
        let end = self.graph.end();
        if let Some(e) = self.entry(0, Vec::new(), 0.0) {
            heap.push(e);
        }
        let mut found = Vec::new();
        while let Some(top) = heap.pop() {
            if top.vertex == end {
                found.push(FragmentPath {
                    total_score: top.g,
                    fragments: top.prefix,
                });
                if found.len() == n {
                    break;
                }
                continue;
            }
            for &e in &self.out[top.vertex] {
                let mut prefix = top.prefix.clone();
                prefix.push(e);
                if let Some(child) = self.entry(self.graph.edges[e].to, prefix, top.g + self.value(e)) {
                    heap.push(child);
                }
            }
        }
        found
    }
}

/// Best-scoring fragment sequence from vertex 0 to the last vertex.
pub fn best_sequence(graph: &DecodeGraph, fragment_penalty: f64) -> Result<FragmentPath, DecodeError> {
    n_best(graph, fragment_penalty, 1).map(|mut v| v.remove(0))
}

/// The top `n` distinct paths in rank order (fewer if fewer exist).
pub fn n_best(graph: &DecodeGraph, fragment_penalty: f64, n: usize) -> Result<Vec<FragmentPath>, DecodeError> {
    if n == 0 {
        return Err(DecodeError::ZeroN);
    }
    if graph.vertex_count < 2 {
        return Err(DecodeError::Disconnected);
    }
    let d = Decoder::new(graph, fragment_penalty);
    if d.suffix[0].is_none() {
        return Err(DecodeError::Disconnected);
    }
    Ok(d.search(n))
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Every start-to-end path with its score, by exhaustive enumeration.
    pub fn all_paths(g: &DecodeGraph, penalty: f64) -> Vec<(f64, Vec<usize>)> {
        fn go(g: &DecodeGraph, penalty: f64, v: usize, acc: f64, path: &mut Vec<usize>, out: &mut Vec<(f64, Vec<usize>)>) {
            if v == g.end() {
                out.push((acc, path.clone()));
                return;
            }
            for (i, e) in g.edges.iter().enumerate() {
                if e.from == v {
                    path.push(i);
                    go(g, penalty, e.to, acc + e.score - penalty, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(g, penalty, 0, 0.0, &mut Vec::new(), &mut out);
        out
    }
}
