//! Random instances and dense reference implementations shared by the
//! integration tests. Everything here is written against plain dense
//! matrices so it does not share code paths with the sparse kernels.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use yygnn::graph::CsrGraph;
use yygnn::model::{link_loss, loss_gradients, DataFingerprint, EncoderKind, Model, ModelConfig};
use yygnn::nn::Features;
use yygnn::negsample::{sample_negative_set, NegativeGraphSet, SamplerMode};
use yygnn::propagation::PropagationConfig;
use yygnn::rng::seeded;

pub type Dense = Array2<f64>;

pub fn random_graph(n: usize, p: f64, seed: u64) -> CsrGraph {
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    CsrGraph::from_edges(n, edges).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Dense {
    let mut rng = seeded(seed);
    Dense::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

pub struct Instance {
    pub g: CsrGraph,
    pub neg: NegativeGraphSet,
    pub fx: Dense,
    pub y: Dense,
    pub cfg: PropagationConfig,
}

/// Random graph, `k` sampled negative graphs, random `F`, `Y` and weights.
pub fn random_instance(seed: u64, n: usize, d: usize, k: usize) -> Instance {
    let mut rng = seeded(seed ^ 0xABCD);
    let g = random_graph(n, rng.gen_range(0.2..0.45), seed);
    let mode = if seed % 2 == 0 {
        SamplerMode::SourceUniform
    } else {
        SamplerMode::GlobalUniform
    };
    let neg = sample_negative_set(&g, k, mode, seed.wrapping_mul(31)).unwrap();
    let cfg = PropagationConfig {
        lambda: rng.gen_range(0.2..3.0),
        lambda_k: (0..k).map(|_| rng.gen_range(0.1..2.0)).collect(),
        learnable_lambda_k: false,
        gamma: rng.gen_range(-0.5..1.0),
        alpha: rng.gen_range(0.05..0.4),
        steps: 3,
        lower_bound: true,
    };
    Instance {
        fx: random_matrix(n, d, seed + 1),
        y: random_matrix(n, d, seed + 2),
        g,
        neg,
        cfg,
    }
}

/// Adjacency counting parallel edges.
pub fn dense_adjacency(g: &CsrGraph) -> Dense {
    let n = g.num_nodes();
    let mut a = Dense::zeros((n, n));
    for (i, j) in g.edges() {
        a[[i, j]] += 1.0;
        a[[j, i]] += 1.0;
    }
    a
}

pub fn row_sums(a: &Dense) -> Array1<f64> {
    a.sum_axis(ndarray::Axis(1))
}

fn inv_sqrt(d: &Array1<f64>) -> Dense {
    Dense::from_diag(&d.mapv(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }))
}

/// `N^{-1/2}(diag(A1) − A)N^{-1/2}`.
pub fn dense_laplacian(a: &Dense, norm: &Array1<f64>) -> Dense {
    let s = inv_sqrt(norm);
    let l = Dense::from_diag(&row_sums(a)) - a;
    s.dot(&l).dot(&s)
}

pub fn trace_quad(y: &Dense, l: &Dense) -> f64 {
    (y.t().dot(l).dot(y)).diag().sum()
}

pub struct DenseModel {
    pub r: Dense,
    pub lpos: Dense,
    pub lneg: Vec<Dense>,
    pub apos: Dense,
    pub aneg: Vec<Dense>,
    pub num_edges: f64,
}

pub fn dense_model(g: &CsrGraph, neg: &NegativeGraphSet) -> DenseModel {
    let apos = dense_adjacency(g);
    let aneg: Vec<Dense> = neg.graphs().iter().map(dense_adjacency).collect();
    let dpos = row_sums(&apos);
    let mut dk = Array1::zeros(g.num_nodes());
    for a in &aneg {
        dk = dk + row_sums(a);
    }
    let r = Dense::from_diag(&(&dpos + &dk).mapv(|v| if v > 0.0 { 1.0 / v } else { 1.0 }));
    DenseModel {
        r,
        lpos: dense_laplacian(&apos, &dpos),
        lneg: aneg.iter().map(|a| dense_laplacian(a, &dk)).collect(),
        apos,
        aneg,
        num_edges: g.num_edges() as f64,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DenseModel {
    fn weights(&self, cfg: &PropagationConfig) -> (Vec<f64>, f64) {
        let k = cfg.lambda_k.len() as f64;
        let mean = cfg.lambda_k.iter().sum::<f64>() / k;
        let w = if mean == 0.0 {
            vec![1.0; cfg.lambda_k.len()]
        } else {
            cfg.lambda_k.iter().map(|l| l / mean).collect()
        };
        (w, mean)
    }

    pub fn q(&self, y: &Dense, cfg: &PropagationConfig) -> f64 {
        let (w, _) = self.weights(cfg);
        let tr: f64 = self.lneg.iter().zip(&w).map(|(l, w)| w * trace_quad(y, l)).sum();
        cfg.gamma * self.num_edges - tr
    }

    pub fn energy(&self, y: &Dense, fx: &Dense, cfg: &PropagationConfig) -> f64 {
        let diff = y - fx;
        let fit = (diff.t().dot(&self.r).dot(&diff)).diag().sum();
        let k = cfg.lambda_k.len() as f64;
        let third = if cfg.lower_bound {
            let (_, mean) = self.weights(cfg);
            mean / k * softplus(self.q(y, cfg))
        } else {
            -self
                .lneg
                .iter()
                .zip(&cfg.lambda_k)
                .map(|(l, lk)| lk * trace_quad(y, l))
                .sum::<f64>()
                / k
        };
        fit + cfg.lambda * trace_quad(y, &self.lpos) + third
    }

    pub fn gradient(&self, y: &Dense, fx: &Dense, cfg: &PropagationConfig) -> Dense {
        let sigma = if cfg.lower_bound { sigmoid(self.q(y, cfg)) } else { 1.0 };
        let k = cfg.lambda_k.len() as f64;
        let mut g = self.r.dot(&(y - fx)) * 2.0 + self.lpos.dot(y) * (2.0 * cfg.lambda);
        for (l, lk) in self.lneg.iter().zip(&cfg.lambda_k) {
            g = g - l.dot(y) * (2.0 * sigma * lk / k);
        }
        g
    }
}

/// Central differences of a scalar function of a matrix.
pub fn numeric_gradient(x: &Dense, h: f64, mut f: impl FnMut(&Dense) -> f64) -> Dense {
    let mut out = Dense::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

pub fn frob(m: &Dense) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`.
pub fn rel_err(a: &Dense, b: &Dense) -> f64 {
    let scale = frob(a).max(frob(b)).max(1e-300);
    frob(&(a - b)) / scale
}

// ---- full model pipeline -------------------------------------------------

pub fn dummy_fingerprint() -> DataFingerprint {
    DataFingerprint {
        graph: String::new(),
        features: String::new(),
        split_seed: 0,
    }
}

/// Parameter tensors in checkpoint order, `λ_K^k` last as a `1 × K` row.
pub fn param_groups(m: &Model) -> Vec<Dense> {
    let mut out = Vec::new();
    for mlp in [&m.base, &m.decoder] {
        out.extend(mlp.weights.iter().cloned());
        out.extend(mlp.biases.iter().cloned());
    }
    out.push(Dense::from_shape_vec((1, m.lambda_k.len()), m.lambda_k.clone()).unwrap());
    out
}

pub fn set_param_group(m: &mut Model, gi: usize, v: &Dense) {
    let mut i = gi;
    for mlp in [&mut m.base, &mut m.decoder] {
        let n = mlp.num_layers();
        if i < n {
            mlp.weights[i] = v.clone();
            return;
        }
        i -= n;
        if i < n {
            mlp.biases[i] = v.clone();
            return;
        }
        i -= n;
    }
    m.lambda_k = v.row(0).to_vec();
}

pub struct PipelineCase {
    pub g: CsrGraph,
    pub x: Features,
    pub model: Model,
    pub pos: Vec<(usize, usize)>,
    pub neg: Vec<(usize, usize)>,
    pub per_edge: usize,
    pub negset_seed: u64,
}

/// Small random model: n ≤ 12, d ≤ 4, T ≤ 4, K ≤ 2, learnable `λ_K^k`.
pub fn pipeline_case(seed: u64, encoder: EncoderKind) -> PipelineCase {
    let mut rng = seeded(seed ^ 0x5EED);
    let n = rng.gen_range(6..=12);
    let d = rng.gen_range(2..=4);
    let k = rng.gen_range(1..=2);
    let g = random_graph(n, 0.35, seed);
    let cfg = ModelConfig {
        encoder,
        hidden: d,
        base_layers: 2,
        decoder_layers: 2,
        dropout: 0.0,
        sampler: SamplerMode::SourceUniform,
        prop: PropagationConfig {
            lambda: rng.gen_range(0.3..2.0),
            lambda_k: (0..k).map(|_| rng.gen_range(0.2..1.5)).collect(),
            learnable_lambda_k: true,
            gamma: rng.gen_range(-0.5..0.5),
            alpha: rng.gen_range(0.1..0.4),
            steps: rng.gen_range(1..=4),
            lower_bound: true,
        },
    };
    let mut model = Model::new(cfg, 3, dummy_fingerprint(), seed).unwrap();
    // Zero biases put pre-activations of all-zero rows exactly on the ReLU
    // kink, where central differences see a one-sided slope.
    for b in model.base.biases.iter_mut().chain(model.decoder.biases.iter_mut()) {
        b.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    let pos: Vec<(usize, usize)> = g.edges().take(6).collect();
    let per_edge = 2;
    let neg = (0..pos.len() * per_edge)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    PipelineCase {
        x: Features::Dense(random_matrix(n, 3, seed + 7)),
        g,
        model,
        pos,
        neg,
        per_edge,
        negset_seed: seed + 11,
    }
}

impl PipelineCase {
    /// The loss through the plain (tape-free) inference path.
    pub fn plain_loss(&self, m: &Model) -> f64 {
        let y = m.encode(&self.g, &self.x, self.negset_seed).unwrap().y;
        let p = m.score_pairs(&y, &self.pos).unwrap();
        let q = m.score_pairs(&y, &self.neg).unwrap();
        link_loss(&p, &q, self.per_edge).unwrap()
    }

    /// Relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the tape gradient
    /// of every parameter (concatenated) and central differences of
    /// [`PipelineCase::plain_loss`], plus the tape loss's deviation from the
    /// plain loss. The whole-vector norm keeps near-zero groups from being
    /// judged against finite-difference rounding alone.
    pub fn gradient_error(&self) -> (f64, f64) {
        let lg = loss_gradients(&self.model, &self.g, &self.x, self.negset_seed, &self.pos, &self.neg, self.per_edge).unwrap();
        let loss_gap = (lg.loss - self.plain_loss(&self.model)).abs();
        let groups = param_groups(&self.model);
        let last = groups.len() - 1;
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (gi, value) in groups.iter().enumerate() {
            // The baseline encoder keeps its negative weights fixed.
            if gi == last && self.model.config.encoder == EncoderKind::GcnNeg {
                assert!(lg.grads[gi].is_none());
                continue;
            }
            let numeric = numeric_gradient(value, 1e-5, |v| {
                let mut m = self.model.clone();
                set_param_group(&mut m, gi, v);
                self.plain_loss(&m)
            });
            // The baseline has no biases on its propagation layers; those
            // tensors get no gradient and the loss does not depend on them.
            if self.model.config.encoder == EncoderKind::YinYang {
                assert!(lg.grads[gi].is_some(), "group {gi} has no gradient");
            }
            let analytic = lg.grads[gi].clone().unwrap_or_else(|| Dense::zeros(value.raw_dim()));
            diff2 += frob(&(&analytic - &numeric)).powi(2);
            a2 += frob(&analytic).powi(2);
            n2 += frob(&numeric).powi(2);
        }
        (diff2.sqrt() / f64::max(a2, n2).sqrt().max(1e-300), loss_gap)
    }
}

// ---- ranking and heuristic oracles ---------------------------------------

/// Fraction of positives beaten by fewer than `k` negatives.
pub fn brute_hits(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    let mut hits = 0usize;
    for &p in pos {
        let mut above = 0usize;
        for &n in neg {
            if n > p {
                above += 1;
            }
        }
        if above < k {
            hits += 1;
        }
    }
    hits as f64 / pos.len() as f64
}

pub fn brute_mrr(per_source: &[(f64, Vec<f64>)]) -> f64 {
    let mut total = 0.0;
    for (p, negs) in per_source {
        let mut rank = 1usize;
        for n in negs {
            if n > p {
                rank += 1;
            }
        }
        total += 1.0 / rank as f64;
    }
    total / per_source.len() as f64
}

/// CN, AA and RA from explicit neighbour sets.
pub fn brute_heuristics(g: &CsrGraph, i: usize, j: usize) -> (f64, f64, f64) {
    use std::collections::HashSet;
    let ni: HashSet<usize> = g.neighbors(i).iter().copied().collect();
    let nj: HashSet<usize> = g.neighbors(j).iter().copied().collect();
    let (mut cn, mut aa, mut ra) = (0.0, 0.0, 0.0);
    for &z in ni.intersection(&nj) {
        let dz = g.neighbors(z).len() as f64;
        cn += 1.0;
        aa += 1.0 / dz.ln();
        ra += 1.0 / dz;
    }
    (cn, aa, ra)
}

/// Random scores on a coarse grid so that ties are common.
pub fn random_scores(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| (rng.gen_range(0..20) as f64) / 4.0).collect()
}
