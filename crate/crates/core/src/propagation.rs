//! The lower-level energy, its gradient, and the unrolled descent layers.
//!
//! With `R = (D + D⁻_K)^{-1}`, `L̃ = D^{-1/2} L D^{-1/2}` and
//! `L̃⁻_k = D_K^{-1/2} L⁻_k D_K^{-1/2}` the monitored energy is
//!
//! ```text
//! E(Y) = ‖R^{1/2}(Y − F)‖² + λ tr[YᵀL̃Y] + (λ̄/K) Softplus(Q)
//! Q    = γ|E| − Σ_k (λ_k/λ̄) tr[YᵀL̃⁻_k Y]
//! ```
//!
//! whose gradient is `2R(Y−F) + 2λL̃Y − (2σ(Q)/K) Σ_k λ_k L̃⁻_k Y`. One layer
//! is a gradient step of size `α/2`. Without the lower bound the last term of
//! `E` is `−(1/K) Σ_k λ_k tr[YᵀL̃⁻_k Y]` and `σ(Q)` is replaced by one.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{
    degrees, inv_sqrt_degree, laplacian_apply, laplacian_quadratic, CsrGraph, Edge, Matrix,
    SparseOperator,
};
use crate::negsample::NegativeGraphSet;
use crate::nn::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    /// Positive-edge smoothing weight `λ`.
    pub lambda: f64,
    /// Per-negative-graph weights `λ_K^k`; its length is `K`.
    pub lambda_k: Vec<f64>,
    pub learnable_lambda_k: bool,
    pub gamma: f64,
    /// Layer update scale; the gradient step is `α/2`.
    pub alpha: f64,
    /// Number of unrolled layers `T`.
    pub steps: usize,
    pub lower_bound: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_k: vec![1.0],
            learnable_lambda_k: false,
            gamma: 0.0,
            alpha: 0.5,
            steps: 8,
            lower_bound: true,
        }
    }
}

impl PropagationConfig {
    pub fn num_neg_graphs(&self) -> usize {
        self.lambda_k.len()
    }

    pub fn mean_lambda_k(&self) -> f64 {
        self.lambda_k.iter().sum::<f64>() / self.lambda_k.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 {
            return bad("T must be at least 1".into());
        }
        if self.lambda_k.is_empty() {
            return bad("K must be at least 1".into());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.lambda_k.iter().any(|v| !v.is_finite()) || !self.gamma.is_finite() {
            return bad("lambda_k and gamma must be finite".into());
        }
        Ok(())
    }

    /// Weights `λ_k/λ̄` applied to each negative trace inside `Q`; uniform when
    /// every `λ_k` is zero.
    pub fn q_weights(&self) -> Vec<f64> {
        q_weights(&self.lambda_k)
    }
}

pub(crate) fn q_weights(lambda_k: &[f64]) -> Vec<f64> {
    let k = lambda_k.len() as f64;
    let sum: f64 = lambda_k.iter().sum();
    if sum == 0.0 {
        vec![1.0; lambda_k.len()]
    } else {
        lambda_k.iter().map(|l| k * l / sum).collect()
    }
}

/// Embeddings after `t` layers and the `Q` value seen by each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub y: Matrix,
    pub t: usize,
    pub q_trace: Vec<f64>,
}

impl EmbeddingState {
    pub fn initial(fx: Matrix) -> Self {
        Self {
            y: fx,
            t: 0,
            q_trace: Vec::new(),
        }
    }
}

pub(crate) struct NegOperator {
    pub adj: SparseOperator,
    pub diag: Vec<f64>,
    pub edges: Vec<Edge>,
}

/// Sparse operators for one (training graph, negative set) pair, built once
/// per epoch and shared by all layers.
pub struct EnergyOperators {
    pub(crate) n: usize,
    pub(crate) num_pos_edges: usize,
    pub(crate) pos_adj: SparseOperator,
    pub(crate) pos_diag: Vec<f64>,
    pub(crate) pos_inv_sqrt: Vec<f64>,
    pub(crate) pos_edges: Vec<Edge>,
    pub(crate) fit_scale: Vec<f64>,
    pub(crate) neg_inv_sqrt: Vec<f64>,
    pub(crate) neg: Vec<NegOperator>,
}

impl EnergyOperators {
    pub fn new(g_train: &CsrGraph, negset: &NegativeGraphSet) -> Result<Self> {
        let n = g_train.num_nodes();
        if negset.num_nodes() != n {
            return Err(Error::dims("negative set node count", n, negset.num_nodes()));
        }
        let pos_deg: Vec<f64> = degrees(g_train).into_iter().map(|d| d as f64).collect();
        let neg_deg: Vec<f64> = negset.combined_degrees().iter().map(|&d| d as f64).collect();
        let pos_inv_sqrt: Vec<f64> = pos_deg.iter().map(|&d| inv_sqrt_degree(d)).collect();
        let neg_inv_sqrt: Vec<f64> = neg_deg.iter().map(|&d| inv_sqrt_degree(d)).collect();
        let pos_diag = pos_deg
            .iter()
            .zip(&pos_inv_sqrt)
            .map(|(d, s)| d * s * s)
            .collect();
        let fit_scale = pos_deg
            .iter()
            .zip(&neg_deg)
            .map(|(a, b)| if a + b > 0.0 { 1.0 / (a + b) } else { 1.0 })
            .collect();
        let neg = negset
            .graphs()
            .iter()
            .map(|g| NegOperator {
                adj: SparseOperator::normalized_adjacency(g, &neg_deg),
                diag: (0..n)
                    .map(|i| g.degree(i) as f64 * neg_inv_sqrt[i] * neg_inv_sqrt[i])
                    .collect(),
                edges: g.edges().collect(),
            })
            .collect();
        Ok(Self {
            n,
            num_pos_edges: g_train.num_edges(),
            pos_adj: SparseOperator::normalized_adjacency(g_train, &pos_deg),
            pos_diag,
            pos_inv_sqrt,
            pos_edges: g_train.edges().collect(),
            fit_scale,
            neg_inv_sqrt,
            neg,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_neg_graphs(&self) -> usize {
        self.neg.len()
    }

    pub fn num_pos_edges(&self) -> usize {
        self.num_pos_edges
    }

    /// `(D + D⁻_K)^{-1}` diagonal.
    pub fn fit_scale(&self) -> &[f64] {
        &self.fit_scale
    }

    fn check(&self, y: &Matrix, cfg: &PropagationConfig) -> Result<()> {
        if y.nrows() != self.n {
            return Err(Error::dims("embedding rows", self.n, y.nrows()));
        }
        if cfg.num_neg_graphs() != self.neg.len() {
            return Err(Error::dims(
                "lambda_k length vs negative graphs",
                self.neg.len(),
                cfg.num_neg_graphs(),
            ));
        }
        Ok(())
    }

    pub(crate) fn pos_trace(&self, y: &Matrix) -> f64 {
        edge_trace(&self.pos_edges, &self.pos_inv_sqrt, y)
    }

    pub(crate) fn neg_trace(&self, k: usize, y: &Matrix) -> f64 {
        edge_trace(&self.neg[k].edges, &self.neg_inv_sqrt, y)
    }

    /// `L̃ Y`.
    pub(crate) fn pos_laplacian(&self, y: &Matrix) -> Matrix {
        diag_minus_adj(&self.pos_diag, &self.pos_adj, y)
    }

    /// `L̃⁻_k Y`.
    pub(crate) fn neg_laplacian(&self, k: usize, y: &Matrix) -> Matrix {
        diag_minus_adj(&self.neg[k].diag, &self.neg[k].adj, y)
    }

    /// `Q = γ|E| − Σ_k w_k tr[YᵀL̃⁻_k Y]`.
    pub fn q_value(&self, y: &Matrix, cfg: &PropagationConfig) -> Result<f64> {
        self.check(y, cfg)?;
        let w = cfg.q_weights();
        let traces: f64 = (0..self.neg.len()).map(|k| w[k] * self.neg_trace(k, y)).sum();
        Ok(cfg.gamma * self.num_pos_edges as f64 - traces)
    }

    fn gate(&self, q: f64, cfg: &PropagationConfig) -> f64 {
        if cfg.lower_bound {
            sigmoid(q)
        } else {
            1.0
        }
    }

    pub fn energy(&self, y: &Matrix, fx: &Matrix, cfg: &PropagationConfig) -> Result<f64> {
        self.check(y, cfg)?;
        check_same_shape(y, fx)?;
        let fit: f64 = y
            .outer_iter()
            .zip(fx.outer_iter())
            .zip(&self.fit_scale)
            .map(|((a, b), s)| s * a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
            .sum();
        let smooth = cfg.lambda * self.pos_trace(y);
        let k = self.neg.len() as f64;
        let repel = if cfg.lower_bound {
            let q = self.q_value(y, cfg)?;
            cfg.mean_lambda_k() / k * softplus(q)
        } else {
            -(0..self.neg.len())
                .map(|i| cfg.lambda_k[i] * self.neg_trace(i, y))
                .sum::<f64>()
                / k
        };
        Ok(fit + smooth + repel)
    }

    /// Exact gradient of [`EnergyOperators::energy`].
    pub fn gradient(&self, y: &Matrix, fx: &Matrix, cfg: &PropagationConfig) -> Result<Matrix> {
        self.check(y, cfg)?;
        check_same_shape(y, fx)?;
        let sigma = self.gate(self.q_value(y, cfg)?, cfg);
        let half = self.half_gradient(y, fx, cfg, sigma);
        Ok(half * 2.0)
    }

    /// `R(Y−F) + λL̃Y − (σ/K) Σ_k λ_k L̃⁻_k Y`.
    fn half_gradient(&self, y: &Matrix, fx: &Matrix, cfg: &PropagationConfig, sigma: f64) -> Matrix {
        let mut g = y - fx;
        scale_rows(&mut g, &self.fit_scale);
        if cfg.lambda != 0.0 {
            g.scaled_add(cfg.lambda, &self.pos_laplacian(y));
        }
        let k = self.neg.len() as f64;
        for (i, &lk) in cfg.lambda_k.iter().enumerate() {
            if lk != 0.0 && sigma != 0.0 {
                g.scaled_add(-sigma * lk / k, &self.neg_laplacian(i, y));
            }
        }
        g
    }

    /// `Y − α·(½∇E)` with `σ(Q)` taken at `y`; returns the new embeddings,
    /// `Q` and the gate value.
    pub(crate) fn layer(&self, y: &Matrix, fx: &Matrix, cfg: &PropagationConfig) -> Result<(Matrix, f64, f64)> {
        self.check(y, cfg)?;
        check_same_shape(y, fx)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embeddings entering a propagation layer".into()));
        }
        let q = self.q_value(y, cfg)?;
        let sigma = self.gate(q, cfg);
        let half = self.half_gradient(y, fx, cfg, sigma);
        let mut out = y.clone();
        out.scaled_add(-cfg.alpha, &half);
        Ok((out, q, sigma))
    }

    /// One layer: `Y ← Y − α·(½∇E)`, with `Q` taken from the incoming state.
    pub fn step(&self, state: &EmbeddingState, fx: &Matrix, cfg: &PropagationConfig) -> Result<EmbeddingState> {
        let (y, q, _) = self.layer(&state.y, fx, cfg).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("embeddings at layer {}", state.t)),
            other => other,
        })?;
        let mut q_trace = state.q_trace.clone();
        q_trace.push(q);
        Ok(EmbeddingState {
            y,
            t: state.t + 1,
            q_trace,
        })
    }

    /// `T` layers starting from `Y⁽⁰⁾ = F`.
    pub fn forward(&self, fx: &Matrix, cfg: &PropagationConfig) -> Result<EmbeddingState> {
        cfg.validate()?;
        let mut state = EmbeddingState::initial(fx.clone());
        for _ in 0..cfg.steps {
            state = self.step(&state, fx, cfg)?;
        }
        Ok(state)
    }

    /// Like [`EnergyOperators::forward`] but also records energy, `Q` and
    /// `σ(Q)` before every layer and after the last one.
    pub fn forward_with_diagnostics(
        &self,
        fx: &Matrix,
        cfg: &PropagationConfig,
    ) -> Result<(EmbeddingState, Vec<LayerDiagnostics>)> {
        cfg.validate()?;
        let mut state = EmbeddingState::initial(fx.clone());
        let mut diags = Vec::with_capacity(cfg.steps + 1);
        for _ in 0..=cfg.steps {
            let q = self.q_value(&state.y, cfg)?;
            diags.push(LayerDiagnostics {
                t: state.t,
                energy: self.energy(&state.y, fx, cfg)?,
                q,
                sigma: sigmoid(q),
            });
            if state.t == cfg.steps {
                break;
            }
            state = self.step(&state, fx, cfg)?;
        }
        Ok((state, diags))
    }
}

impl std::fmt::Debug for EnergyOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyOperators")
            .field("num_nodes", &self.n)
            .field("num_neg_graphs", &self.neg.len())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDiagnostics {
    pub t: usize,
    pub energy: f64,
    pub q: f64,
    pub sigma: f64,
}

/// Text dump, one `t, energy, Q, sigma(Q)` line per layer.
pub fn format_diagnostics(diags: &[LayerDiagnostics]) -> String {
    let mut out = String::from("t, energy, Q, sigma(Q)\n");
    for d in diags {
        let _ = writeln!(out, "{}, {:.12e}, {:.12e}, {:.12e}", d.t, d.energy, d.q, d.sigma);
    }
    out
}

fn edge_trace(edges: &[Edge], inv_sqrt: &[f64], y: &Matrix) -> f64 {
    edges
        .iter()
        .map(|&(i, j)| {
            let (si, sj) = (inv_sqrt[i], inv_sqrt[j]);
            y.row(i)
                .iter()
                .zip(y.row(j).iter())
                .map(|(a, b)| (a * si - b * sj).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn diag_minus_adj(diag: &[f64], adj: &SparseOperator, y: &Matrix) -> Matrix {
    let mut out = adj.apply(y);
    out.mapv_inplace(|v| -v);
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        if diag[i] != 0.0 {
            row.scaled_add(diag[i], &y.row(i));
        }
    }
    out
}

pub(crate) fn scale_rows(m: &mut Matrix, scale: &[f64]) {
    for (mut row, &s) in m.outer_iter_mut().zip(scale) {
        row.mapv_inplace(|v| v * s);
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dims(
            "embedding vs base output shape",
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    Ok(())
}

pub fn compute_q(
    y: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<f64> {
    EnergyOperators::new(g_train, negset)?.q_value(y, cfg)
}

pub fn energy(
    y: &Matrix,
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<f64> {
    EnergyOperators::new(g_train, negset)?.energy(y, fx, cfg)
}

pub fn propagate_step(
    state: &EmbeddingState,
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<EmbeddingState> {
    EnergyOperators::new(g_train, negset)?.step(state, fx, cfg)
}

pub fn forward(
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<EmbeddingState> {
    EnergyOperators::new(g_train, negset)?.forward(fx, cfg)
}

// ---------------------------------------------------------------------------
// Quadratic (unbounded, unnormalized) energy: convexity, step bound and the
// closed-form minimizer.

/// Which Laplacians enter the quadratic Hessian `I + λL − (1/K)Σ_k λ_k L⁻_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    /// `L = D − A`; the energy iterated by [`quadratic_step`].
    Combinatorial,
    /// `L̃`, `L̃⁻_k` as used by the propagation layers.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeBound {
    /// `‖I + λL − (λ̄/K) L⁻‖_F^{-1}`.
    pub alpha_max: f64,
    /// `1 + λ δ⁺_min − (λ̄/K) δ_max > 0`.
    pub convex: bool,
    /// The Hessian eigenvalue lower bound `1 + λ δ⁺_min − (λ̄/K) δ_max`.
    pub hessian_lower_bound: f64,
    pub delta_min_pos: f64,
    /// Largest eigenvalue of the weighted negative Laplacian `Σ_k w_k L⁻_k`.
    pub delta_max: f64,
    /// Exact smallest eigenvalue of the Hessian (`n ≤ 2000` only).
    pub hessian_min_eigenvalue: Option<f64>,
}

const DENSE_LIMIT: usize = 2000;

fn dense_laplacian(g: &CsrGraph, norm_degrees: Option<&[f64]>) -> DMatrix<f64> {
    let n = g.num_nodes();
    let s: Vec<f64> = match norm_degrees {
        Some(d) => d.iter().map(|&v| inv_sqrt_degree(v)).collect(),
        None => vec![1.0; n],
    };
    let mut l = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        l[(i, i)] += s[i] * s[i];
        l[(j, j)] += s[j] * s[j];
        l[(i, j)] -= s[i] * s[j];
        l[(j, i)] -= s[i] * s[j];
    }
    l
}

struct QuadraticParts {
    pos: DMatrix<f64>,
    neg_weighted: DMatrix<f64>,
    hessian: DMatrix<f64>,
}

fn quadratic_parts(
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
    kind: LaplacianKind,
) -> Result<QuadraticParts> {
    cfg.validate()?;
    if negset.num_graphs() != cfg.num_neg_graphs() {
        return Err(Error::dims(
            "lambda_k length vs negative graphs",
            negset.num_graphs(),
            cfg.num_neg_graphs(),
        ));
    }
    let n = g_train.num_nodes();
    let (pos_norm, neg_norm): (Option<Vec<f64>>, Option<Vec<f64>>) = match kind {
        LaplacianKind::Combinatorial => (None, None),
        LaplacianKind::Normalized => (
            Some(degrees(g_train).into_iter().map(|d| d as f64).collect()),
            Some(negset.combined_degrees().iter().map(|&d| d as f64).collect()),
        ),
    };
    let pos = dense_laplacian(g_train, pos_norm.as_deref());
    let w = cfg.q_weights();
    let mut neg_weighted = DMatrix::zeros(n, n);
    for (k, g) in negset.graphs().iter().enumerate() {
        neg_weighted += dense_laplacian(g, neg_norm.as_deref()) * w[k];
    }
    let k = cfg.num_neg_graphs() as f64;
    let hessian = DMatrix::identity(n, n) + &pos * cfg.lambda - &neg_weighted * (cfg.mean_lambda_k() / k);
    Ok(QuadraticParts {
        pos,
        neg_weighted,
        hessian,
    })
}

/// Frobenius step bound and convexity verdict for the quadratic energy.
pub fn step_size_bound(
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
    kind: LaplacianKind,
) -> Result<StepSizeBound> {
    let n = g_train.num_nodes();
    let k = cfg.num_neg_graphs() as f64;
    let scale = cfg.mean_lambda_k() / k;
    if n > DENSE_LIMIT {
        return sparse_step_size_bound(g_train, negset, cfg, kind);
    }
    let parts = quadratic_parts(g_train, negset, cfg, kind)?;
    let delta_min_pos = SymmetricEigen::new(parts.pos.clone())
        .eigenvalues
        .min()
        .max(0.0);
    let delta_max = SymmetricEigen::new(parts.neg_weighted.clone()).eigenvalues.max().max(0.0);
    let hessian_min = SymmetricEigen::new(parts.hessian.clone()).eigenvalues.min();
    let lower = 1.0 + cfg.lambda * delta_min_pos - scale * delta_max;
    Ok(StepSizeBound {
        alpha_max: 1.0 / parts.hessian.norm(),
        convex: lower > 0.0,
        hessian_lower_bound: lower,
        delta_min_pos,
        delta_max,
        hessian_min_eigenvalue: Some(hessian_min),
    })
}

fn sparse_step_size_bound(
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
    kind: LaplacianKind,
) -> Result<StepSizeBound> {
    // Frobenius norm accumulated entry-wise; δ_max by power iteration.
    let n = g_train.num_nodes();
    let (pos_norm, neg_norm): (Vec<f64>, Vec<f64>) = match kind {
        LaplacianKind::Combinatorial => (vec![1.0; n], vec![1.0; n]),
        LaplacianKind::Normalized => (
            degrees(g_train).into_iter().map(|d| d as f64).collect(),
            negset.combined_degrees().iter().map(|&d| d as f64).collect(),
        ),
    };
    let one = |d: &[f64]| -> Vec<f64> {
        match kind {
            LaplacianKind::Combinatorial => vec![1.0; d.len()],
            LaplacianKind::Normalized => d.to_vec(),
        }
    };
    let w = cfg.q_weights();
    let k = cfg.num_neg_graphs() as f64;
    let scale = cfg.mean_lambda_k() / k;
    let mut entries: std::collections::HashMap<(usize, usize), f64> = Default::default();
    let mut add = |i: usize, j: usize, v: f64| *entries.entry((i, j)).or_insert(0.0) += v;
    for i in 0..n {
        add(i, i, 1.0);
    }
    let mut push_lap = |g: &CsrGraph, norm: &[f64], coef: f64| {
        let s: Vec<f64> = match kind {
            LaplacianKind::Combinatorial => vec![1.0; n],
            LaplacianKind::Normalized => norm.iter().map(|&d| inv_sqrt_degree(d)).collect(),
        };
        for (i, j) in g.edges() {
            add(i, i, coef * s[i] * s[i]);
            add(j, j, coef * s[j] * s[j]);
            add(i, j, -coef * s[i] * s[j]);
            add(j, i, -coef * s[i] * s[j]);
        }
    };
    push_lap(g_train, &pos_norm, cfg.lambda);
    for (idx, g) in negset.graphs().iter().enumerate() {
        push_lap(g, &neg_norm, -scale * w[idx]);
    }
    let frob = entries.values().map(|v| v * v).sum::<f64>().sqrt();

    let neg_deg = one(&neg_norm);
    let apply_neg = |v: &Matrix| -> Matrix {
        let mut acc = Matrix::zeros(v.raw_dim());
        for (idx, g) in negset.graphs().iter().enumerate() {
            let lap = laplacian_apply(g, v, &neg_deg).expect("shapes match");
            acc.scaled_add(w[idx], &lap);
        }
        acc
    };
    let mut v = Matrix::from_shape_fn((n, 1), |(i, _)| 1.0 + (i % 7) as f64 * 0.1 - 0.3);
    let mut delta_max = 0.0;
    for _ in 0..500 {
        let next = apply_neg(&v);
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            delta_max = 0.0;
            break;
        }
        let prev = delta_max;
        delta_max = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next / norm;
        if (delta_max - prev).abs() <= 1e-10 * delta_max {
            break;
        }
    }
    let lower = 1.0 - scale * delta_max;
    Ok(StepSizeBound {
        alpha_max: 1.0 / frob,
        convex: lower > 0.0,
        hessian_lower_bound: lower,
        delta_min_pos: 0.0,
        delta_max,
        hessian_min_eigenvalue: None,
    })
}

/// Solves `(I + λL − (1/K)Σ_k λ_k L⁻_k) Y = F` with combinatorial
/// Laplacians: the minimizer of the quadratic energy [`quadratic_energy`].
pub fn closed_form_minimizer(
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<Matrix> {
    let n = g_train.num_nodes();
    if n > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense solve limited to {DENSE_LIMIT} nodes, got {n}"
        )));
    }
    if fx.nrows() != n {
        return Err(Error::dims("closed_form_minimizer rows", n, fx.nrows()));
    }
    let parts = quadratic_parts(g_train, negset, cfg, LaplacianKind::Combinatorial)?;
    let chol = parts.hessian.cholesky().ok_or_else(|| {
        Error::Singular("Hessian I + λL − (λ_K/K)L⁻ is not positive definite".into())
    })?;
    let rhs = DMatrix::from_row_slice(n, fx.ncols(), fx.as_standard_layout().as_slice().unwrap());
    let sol = chol.solve(&rhs);
    Ok(Matrix::from_shape_fn(fx.raw_dim(), |(i, j)| sol[(i, j)]))
}

/// `‖Y − F‖² + λ tr[YᵀLY] − (1/K) Σ_k λ_k tr[YᵀL⁻_k Y]`, unnormalized.
pub fn quadratic_energy(
    y: &Matrix,
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<f64> {
    let n = g_train.num_nodes();
    let ones = vec![1.0; n];
    let fit: f64 = (y - fx).iter().map(|v| v * v).sum();
    let pos = laplacian_quadratic(g_train, y, &ones)?;
    let k = negset.num_graphs() as f64;
    let mut neg = 0.0;
    for (idx, g) in negset.graphs().iter().enumerate() {
        neg += cfg.lambda_k[idx] * laplacian_quadratic(g, y, &ones)?;
    }
    Ok(fit + cfg.lambda * pos - neg / k)
}

/// One plain gradient-descent update of the quadratic energy:
/// `Y − α((Y − F) + λLY − (1/K) Σ_k λ_k L⁻_k Y)`.
pub fn quadratic_step(
    y: &Matrix,
    fx: &Matrix,
    g_train: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
) -> Result<Matrix> {
    let n = g_train.num_nodes();
    let ones = vec![1.0; n];
    let mut half = y - fx;
    half.scaled_add(cfg.lambda, &laplacian_apply(g_train, y, &ones)?);
    let k = negset.num_graphs() as f64;
    for (idx, g) in negset.graphs().iter().enumerate() {
        half.scaled_add(-cfg.lambda_k[idx] / k, &laplacian_apply(g, y, &ones)?);
    }
    let mut out = y.clone();
    out.scaled_add(-cfg.alpha, &half);
    Ok(out)
}
