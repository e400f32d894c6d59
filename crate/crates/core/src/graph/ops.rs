use ndarray::{Axis, Zip};
use rayon::prelude::*;

use super::{CsrGraph, Matrix};
use crate::error::{Error, Result};

pub fn degrees(g: &CsrGraph) -> Vec<usize> {
    (0..g.num_nodes()).map(|i| g.degree(i)).collect()
}

/// `1/sqrt(d)`, with a zero degree treated as degree one.
#[inline]
pub fn inv_sqrt_degree(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        1.0
    }
}

/// Symmetric sparse matrix with explicit values, stored row-wise.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// `N^{-1/2} A N^{-1/2}` where `N = diag(norm_degrees)`.
    pub fn normalized_adjacency(g: &CsrGraph, norm_degrees: &[f64]) -> Self {
        let s: Vec<f64> = norm_degrees.iter().map(|&d| inv_sqrt_degree(d)).collect();
        let mut vals = Vec::with_capacity(g.col_indices().len());
        for i in 0..g.num_nodes() {
            for &j in g.neighbors(i) {
                vals.push(s[i] * s[j]);
            }
        }
        Self {
            n: g.num_nodes(),
            offsets: g.row_offsets().to_vec(),
            cols: g.col_indices().to_vec(),
            vals,
        }
    }

    /// `ca * a + cb * b`, both operators over the same node set.
    pub fn combine(a: &Self, ca: f64, b: &Self, cb: f64) -> Self {
        assert_eq!(a.n, b.n, "operators over different node sets");
        let mut offsets = vec![0usize; a.n + 1];
        let mut cols = Vec::with_capacity(a.cols.len() + b.cols.len());
        let mut vals = Vec::with_capacity(a.cols.len() + b.cols.len());
        for i in 0..a.n {
            for k in a.offsets[i]..a.offsets[i + 1] {
                cols.push(a.cols[k]);
                vals.push(ca * a.vals[k]);
            }
            for k in b.offsets[i]..b.offsets[i + 1] {
                cols.push(b.cols[k]);
                vals.push(cb * b.vals[k]);
            }
            offsets[i + 1] = cols.len();
        }
        Self {
            n: a.n,
            offsets,
            cols,
            vals,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn apply(&self, y: &Matrix) -> Matrix {
        assert_eq!(y.nrows(), self.n, "sparse apply: row mismatch");
        let mut out = Matrix::zeros(y.raw_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for (j, v) in self.row(i) {
                    row.scaled_add(v, &y.row(j));
                }
            });
        out
    }
}

/// `Ã Y` with `Ã = D^{-1/2} A D^{-1/2}` built from the graph's own degrees.
pub fn normalized_adj_apply(g: &CsrGraph, y: &Matrix) -> Result<Matrix> {
    if y.nrows() != g.num_nodes() {
        return Err(Error::dims("normalized_adj_apply", g.num_nodes(), y.nrows()));
    }
    let degs: Vec<f64> = degrees(g).into_iter().map(|d| d as f64).collect();
    Ok(SparseOperator::normalized_adjacency(g, &degs).apply(y))
}

/// `tr[Yᵀ L̃ Y] = Σ_{(i,j)∈E} ‖y_i/√n_i − y_j/√n_j‖²` with `n = degree_norm`.
pub fn laplacian_quadratic(g: &CsrGraph, y: &Matrix, degree_norm: &[f64]) -> Result<f64> {
    check_shapes(g, y, degree_norm, "laplacian_quadratic")?;
    let s: Vec<f64> = degree_norm.iter().map(|&d| inv_sqrt_degree(d)).collect();
    let mut total = 0.0;
    for (i, j) in g.edges() {
        let (yi, yj) = (y.row(i), y.row(j));
        total += yi
            .iter()
            .zip(yj.iter())
            .map(|(a, b)| {
                let diff = a * s[i] - b * s[j];
                diff * diff
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// `L̃ Y` for the Laplacian of `g` normalized by `degree_norm`; half the
/// gradient of [`laplacian_quadratic`].
pub fn laplacian_apply(g: &CsrGraph, y: &Matrix, degree_norm: &[f64]) -> Result<Matrix> {
    check_shapes(g, y, degree_norm, "laplacian_apply")?;
    let s: Vec<f64> = degree_norm.iter().map(|&d| inv_sqrt_degree(d)).collect();
    let mut out = Matrix::zeros(y.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let diag = g.degree(i) as f64 * s[i] * s[i];
            row.scaled_add(diag, &y.row(i));
            for &j in g.neighbors(i) {
                row.scaled_add(-s[i] * s[j], &y.row(j));
            }
        });
    Ok(out)
}

fn check_shapes(g: &CsrGraph, y: &Matrix, degree_norm: &[f64], ctx: &'static str) -> Result<()> {
    if y.nrows() != g.num_nodes() {
        return Err(Error::dims(ctx, g.num_nodes(), y.nrows()));
    }
    if degree_norm.len() != g.num_nodes() {
        return Err(Error::dims(ctx, g.num_nodes(), degree_norm.len()));
    }
    Ok(())
}

/// Frobenius inner product.
pub(crate) fn frob_dot(a: &Matrix, b: &Matrix) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|x, y| acc += x * y);
    acc
}
