//! Undirected graph storage, feature matrices, normalization operators and
//! edge splitting.
//!
//! [`CsrGraph`] stores both directions of every undirected edge so that
//! propagation is a plain row-wise sparse product, while `num_edges` keeps the
//! undirected count used by the energy's lower bound.

mod io;
mod ops;
mod split;

pub use io::{load_edge_list, load_features, parse_edge_list, write_edge_list};
pub use ops::{
    degrees, inv_sqrt_degree, laplacian_apply, laplacian_quadratic, normalized_adj_apply,
    SparseOperator,
};
pub(crate) use ops::frob_dot;
pub use split::{sample_eval_pool, split_edges, EdgeSplit};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Canonical undirected edge `(i, j)` with `i < j`.
pub type Edge = (usize, usize);

/// Undirected graph in compressed sparse row form.
///
/// Rows are sorted. Graphs built with [`CsrGraph::from_edges`] have no
/// self-loops and no repeated neighbors; [`CsrGraph::from_edge_multiset`]
/// keeps repeated pairs, which negative graphs need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    num_edges: usize,
}

impl CsrGraph {
    /// Builds a simple graph: symmetrized, deduplicated, self-loops dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs = Vec::new();
        for (i, j) in edges {
            check_bounds(i, num_nodes)?;
            check_bounds(j, num_nodes)?;
            if i != j {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self::build(num_nodes, &pairs))
    }

    /// Builds a graph that keeps repeated pairs as parallel edges.
    /// Self-loops are still dropped.
    pub fn from_edge_multiset<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs = Vec::new();
        for (i, j) in edges {
            check_bounds(i, num_nodes)?;
            check_bounds(j, num_nodes)?;
            if i != j {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        Ok(Self::build(num_nodes, &pairs))
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self::build(num_nodes, &[])
    }

    fn build(num_nodes: usize, pairs: &[Edge]) -> Self {
        let mut counts = vec![0usize; num_nodes + 1];
        for &(i, j) in pairs {
            counts[i + 1] += 1;
            counts[j + 1] += 1;
        }
        for v in 0..num_nodes {
            counts[v + 1] += counts[v];
        }
        let row_offsets = counts;
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0usize; 2 * pairs.len()];
        for &(i, j) in pairs {
            col_indices[cursor[i]] = j;
            cursor[i] += 1;
            col_indices[cursor[j]] = i;
            cursor[j] += 1;
        }
        for v in 0..num_nodes {
            col_indices[row_offsets[v]..row_offsets[v + 1]].sort_unstable();
        }
        Self {
            num_nodes,
            row_offsets,
            col_indices,
            num_edges: pairs.len(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && j < self.num_nodes && self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Canonical `(i, j)` pairs with `i < j`, parallel edges repeated.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| i < j)
                .map(move |j| (i, j))
        })
    }

    /// True when every pair of distinct nodes is adjacent.
    pub fn is_complete(&self) -> bool {
        let n = self.num_nodes as u128;
        n < 2 || self.num_edges as u128 >= n * (n - 1) / 2
    }

    /// Short content hash over node count and adjacency.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.num_nodes as u64).to_le_bytes());
        for &o in &self.row_offsets {
            hasher.update((o as u64).to_le_bytes());
        }
        for &c in &self.col_indices {
            hasher.update((c as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_bounds(id: usize, num_nodes: usize) -> Result<()> {
    if id >= num_nodes {
        return Err(Error::NodeOutOfBounds { id, num_nodes });
    }
    Ok(())
}

/// Dense node features, row `i` belongs to node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Matrix,
}

impl FeatureMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self { data })
    }

    /// One-hot identity features, for graphs shipped without attributes.
    pub fn identity(num_nodes: usize) -> Self {
        Self {
            data: Matrix::eye(num_nodes),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_inner(self) -> Matrix {
        self.data
    }

    pub fn check_rows(&self, graph: &CsrGraph) -> Result<()> {
        if self.rows() != graph.num_nodes() {
            return Err(Error::dims(
                "feature rows vs graph nodes",
                graph.num_nodes(),
                self.rows(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.rows() as u64).to_le_bytes());
        hasher.update((self.cols() as u64).to_le_bytes());
        for v in self.data.iter() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_degrees() {
        let g = CsrGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(degrees(&g), vec![1, 2, 1]);
        assert_eq!(g.row_offsets()[3], 4);
    }

    #[test]
    fn duplicates_and_reverse_pairs_collapse() {
        let g = CsrGraph::from_edges(2, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = CsrGraph::from_edges(3, [(0, 0), (1, 2)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.degree(0), 0);
    }

    #[test]
    fn multiset_keeps_parallel_edges() {
        let g = CsrGraph::from_edge_multiset(3, [(0, 2), (2, 0), (1, 2)]).unwrap();
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.neighbors(2), &[0, 0, 1]);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 2), (0, 2), (1, 2)]);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let err = CsrGraph::from_edges(2, [(0, 2)]).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfBounds { id: 2, num_nodes: 2 }));
    }

    #[test]
    fn completeness() {
        let tri = CsrGraph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(tri.is_complete());
        let path = CsrGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert!(!path.is_complete());
    }

    #[test]
    fn fingerprint_depends_on_structure() {
        let a = CsrGraph::from_edges(3, [(0, 1)]).unwrap();
        let b = CsrGraph::from_edges(3, [(1, 2)]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }

    #[test]
    fn features_reject_nan() {
        let m = Matrix::from_elem((2, 2), f64::NAN);
        assert!(FeatureMatrix::new(m).is_err());
    }
}
