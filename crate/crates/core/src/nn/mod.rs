//! Minimal reverse-mode autodiff and the small dense networks built on it.

mod adam;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{dropout_mask, Activation, MlpParams, TapeInput};
pub use tape::{Gradients, Tape, Var};

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::graph::Matrix;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-compressed constant matrix, used for bag-of-words node features.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrFeatures {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrFeatures {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in m.outer_iter() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// `X W`.
    pub fn dot(&self, w: &Matrix) -> Result<Matrix> {
        if w.nrows() != self.cols {
            return Err(Error::dims("sparse features x weight", self.cols, w.nrows()));
        }
        let mut out = Matrix::zeros((self.rows, w.ncols()));
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row.scaled_add(v, &w.row(j));
            }
        }
        Ok(out)
    }

    /// `Xᵀ G`.
    pub fn t_dot(&self, g: &Matrix) -> Matrix {
        let mut out = Matrix::zeros((self.cols, g.ncols()));
        for i in 0..self.rows {
            let gi = g.row(i);
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &gi);
            }
        }
        out
    }
}

/// Node features in whichever layout makes the first layer cheaper.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Matrix),
    Sparse(CsrFeatures),
}

impl Features {
    /// Sparse storage when at most 10% of the entries are nonzero.
    pub fn auto(m: Matrix) -> Self {
        let nnz = m.iter().filter(|v| **v != 0.0).count();
        if nnz * 10 <= m.len() {
            Features::Sparse(CsrFeatures::from_dense(&m))
        } else {
            Features::Dense(m)
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Dense(m) => m.nrows(),
            Features::Sparse(s) => s.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Dense(m) => m.ncols(),
            Features::Sparse(s) => s.cols(),
        }
    }

    pub fn dot(&self, w: &Matrix) -> Result<Matrix> {
        match self {
            Features::Dense(m) => {
                if m.ncols() != w.nrows() {
                    return Err(Error::dims("features x weight", m.ncols(), w.nrows()));
                }
                Ok(m.dot(w))
            }
            Features::Sparse(s) => s.dot(w),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Features::Dense(m) => m.clone(),
            Features::Sparse(s) => {
                let mut out = Matrix::zeros((s.rows, s.cols));
                for i in 0..s.rows {
                    for (j, v) in s.row(i) {
                        out[[i, j]] = v;
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn column_sums(m: &Matrix) -> Matrix {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}
