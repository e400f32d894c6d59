use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{CsrGraph, Matrix};
use crate::nn::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    /// The trained decoder on `y_i ⊙ y_j`; exhaustive.
    HadamardMlp,
    /// `⟨y_i, y_j⟩`; exhaustive.
    Dot,
    /// `⟨y_i, y_j⟩`, skipping candidates whose Cauchy–Schwarz bound cannot
    /// enter the current top k. Returns exactly what [`Scorer::Dot`] does.
    PrunedDot,
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" | "hadamard" => Ok(Self::HadamardMlp),
            "dot" => Ok(Self::Dot),
            "pruned" | "pruned_dot" => Ok(Self::PrunedDot),
            other => Err(Error::InvalidArgument(format!("unknown scorer `{other}`"))),
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HadamardMlp => "mlp",
            Self::Dot => "dot",
            Self::PrunedDot => "pruned_dot",
        })
    }
}

/// Best `k` candidates for one source, by descending score and then
/// ascending node id.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub source: usize,
    pub nodes: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Heap entry ordered so that the worst kept candidate is the maximum.
#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Best {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, score: f64, node: usize) {
        let e = Entry(score, node);
        if self.heap.len() < self.k {
            self.heap.push(e);
        } else if self.heap.peek().is_some_and(|worst| e < *worst) {
            self.heap.pop();
            self.heap.push(e);
        }
    }

    /// Score a candidate must beat once the heap is full.
    fn threshold(&self) -> Option<f64> {
        (self.heap.len() == self.k).then(|| self.heap.peek().expect("k ≥ 1").0)
    }

    fn finish(self, source: usize) -> TopK {
        let sorted = self.heap.into_sorted_vec();
        TopK {
            source,
            nodes: sorted.iter().map(|e| e.1).collect(),
            scores: sorted.iter().map(|e| e.0).collect(),
        }
    }
}

fn excluded(src: usize, j: usize, exclude: Option<&CsrGraph>) -> bool {
    j == src || exclude.is_some_and(|g| g.has_edge(src, j))
}

fn exhaustive(src: usize, scores: ArrayView1<f64>, k: usize, exclude: Option<&CsrGraph>) -> TopK {
    let mut best = Best::new(k);
    for (j, &s) in scores.iter().enumerate() {
        if !excluded(src, j, exclude) {
            best.offer(s, j);
        }
    }
    best.finish(src)
}

fn pruned(src: usize, y: &Matrix, norms: &[f64], order: &[usize], k: usize, exclude: Option<&CsrGraph>) -> TopK {
    let a = y.row(src);
    // Covers rounding in both the dot product and the norm product.
    let slack = 1.0 + 4.0 * y.ncols() as f64 * f64::EPSILON;
    let na = norms[src];
    let mut best = Best::new(k);
    for &j in order {
        if let Some(t) = best.threshold() {
            if na * norms[j] * slack < t {
                break;
            }
        }
        if !excluded(src, j, exclude) {
            best.offer(a.dot(&y.row(j)), j);
        }
    }
    best.finish(src)
}

/// Top-`k` link candidates for each source node. Self-pairs, and pairs
/// already in `exclude` when given, are never returned.
pub fn predict_topk(
    y: &Matrix,
    decoder: &MlpParams,
    sources: &[usize],
    k: usize,
    scorer: Scorer,
    exclude: Option<&CsrGraph>,
) -> Result<Vec<TopK>> {
    let n = y.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k must be in 1..{n}, got {k}")));
    }
    if let Some(&s) = sources.iter().find(|&&s| s >= n) {
        return Err(Error::NodeOutOfBounds { id: s, num_nodes: n });
    }
    if let Some(g) = exclude {
        if g.num_nodes() != n {
            return Err(Error::dims("exclusion graph nodes", n, g.num_nodes()));
        }
    }
    if scorer == Scorer::HadamardMlp && decoder.in_dim() != y.ncols() {
        return Err(Error::dims("embedding width", decoder.in_dim(), y.ncols()));
    }
    match scorer {
        Scorer::HadamardMlp => sources
            .par_iter()
            .map(|&s| {
                let h = y * &y.row(s).insert_axis(Axis(0));
                let scores = decoder.forward(&h)?;
                Ok(exhaustive(s, scores.column(0), k, exclude))
            })
            .collect(),
        Scorer::Dot => Ok(sources
            .par_iter()
            .map(|&s| exhaustive(s, y.dot(&y.row(s)).view(), k, exclude))
            .collect()),
        Scorer::PrunedDot => {
            let norms: Vec<f64> = y.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
            Ok(sources
                .par_iter()
                .map(|&s| pruned(s, y, &norms, &order, k, exclude))
                .collect())
        }
    }
}
