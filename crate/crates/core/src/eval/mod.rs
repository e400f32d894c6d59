//! Ranking metrics, heuristic baselines and the comparator variants.

mod heuristics;
mod metrics;

pub use heuristics::{heuristic_score, HeuristicKind};
pub use metrics::{hits_at_k, mrr, mrr_shared_pool, reciprocal_rank};

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{degrees, CsrGraph, Edge, EdgeSplit, FeatureMatrix, Matrix, SparseOperator};
use crate::model::Model;
use crate::negsample::NegativeGraphSet;
use crate::nn::Features;
use crate::rng::seeded;

/// `Ã − (1/K) Σ_k λ_k Ã⁻_k`, with `Ã⁻_k` normalized by the combined negative
/// degrees.
pub fn gcn_neg_operator(g: &CsrGraph, negset: &NegativeGraphSet, lambda_k: &[f64]) -> Result<SparseOperator> {
    if negset.num_nodes() != g.num_nodes() {
        return Err(Error::dims("negative set node count", g.num_nodes(), negset.num_nodes()));
    }
    if lambda_k.len() != negset.num_graphs() {
        return Err(Error::dims("lambda_k length", negset.num_graphs(), lambda_k.len()));
    }
    let pos_deg: Vec<f64> = degrees(g).into_iter().map(|d| d as f64).collect();
    let neg_deg: Vec<f64> = negset.combined_degrees().iter().map(|&d| d as f64).collect();
    let mut op = SparseOperator::normalized_adjacency(g, &pos_deg);
    let k = lambda_k.len() as f64;
    for (graph, &lk) in negset.graphs().iter().zip(lambda_k) {
        if lk != 0.0 {
            let neg = SparseOperator::normalized_adjacency(graph, &neg_deg);
            op = SparseOperator::combine(&op, 1.0, &neg, -lk / k);
        }
    }
    Ok(op)
}

/// Layers `Y ← ReLU[(Ã − (λ_K/K)Ã⁻) Y W_t]` starting from `Y = X`.
pub fn gcn_neg_forward(
    g: &CsrGraph,
    negset: &NegativeGraphSet,
    x: &Matrix,
    weights: &[Matrix],
    lambda_k: &[f64],
) -> Result<Matrix> {
    if x.nrows() != g.num_nodes() {
        return Err(Error::dims("GCN input rows", g.num_nodes(), x.nrows()));
    }
    let op = gcn_neg_operator(g, negset, lambda_k)?;
    let mut y = x.clone();
    for w in weights {
        if y.ncols() != w.nrows() {
            return Err(Error::dims("GCN layer width", w.nrows(), y.ncols()));
        }
        y = op.apply(&y.dot(w)).mapv(|v| v.max(0.0));
    }
    Ok(y)
}

/// `X + X_R` with `X_R` uniform in `[−scale, scale]`.
pub fn random_feature_variant(x: &FeatureMatrix, noise_scale: f64, seed: u64) -> Result<FeatureMatrix> {
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::InvalidArgument(format!("noise scale must be ≥ 0, got {noise_scale}")));
    }
    if noise_scale == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = seeded(seed);
    let noisy = x.data().mapv(|v| v + rng.gen_range(-noise_scale..=noise_scale));
    FeatureMatrix::new(noisy)
}

/// Which split and candidate pool to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub k: usize,
    pub split: EvalSplit,
}

impl Protocol {
    pub fn describe(&self, pool_size: usize) -> String {
        format!(
            "{} edges vs fixed pool of {pool_size} non-edges; hits@{} counts ties as hits; MRR ranks ties optimistically",
            match self.split {
                EvalSplit::Valid => "valid",
                EvalSplit::Test => "test",
            },
            self.k
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
    pub protocol: String,
}

impl EvalResult {
    pub fn from_values(name: &str, metric: &str, per_seed: Vec<f64>, protocol: String) -> Self {
        let (mean, std) = mean_std(&per_seed);
        Self {
            name: name.to_string(),
            metric: metric.to_string(),
            value: mean,
            std,
            per_seed,
            protocol,
        }
    }

    /// `"93.83 ± 0.78"` on a percentage scale.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.value, 100.0 * self.std)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `name<TAB>metric<TAB>mean<TAB>std<TAB>seeds` rows.
pub fn format_results(results: &[EvalResult]) -> String {
    let mut out = String::new();
    for r in results {
        let seeds = r
            .per_seed
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{}", r.name, r.metric, r.value, r.std, seeds);
    }
    out
}

fn split_pairs(split: &EdgeSplit, which: EvalSplit) -> Result<(&[Edge], &[Edge])> {
    let (pos, neg) = match which {
        EvalSplit::Valid => (&split.valid_edges, &split.valid_negatives),
        EvalSplit::Test => (&split.test_edges, &split.test_negatives),
    };
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "split has no evaluation edges or negative pool".into(),
        ));
    }
    Ok((pos, neg))
}

/// HR@k and MRR of `model` on one split, for one inference seed.
pub fn evaluate_once(
    model: &Model,
    split: &EdgeSplit,
    features: &Features,
    protocol: &Protocol,
    seed: u64,
) -> Result<(f64, f64)> {
    let (pos, neg) = split_pairs(split, protocol.split)?;
    let g_train = split.train_graph();
    let y = model.encode(&g_train, features, seed)?.y;
    let ps = model.score_pairs(&y, pos)?;
    let ns = model.score_pairs(&y, neg)?;
    let k = protocol.k.min(ns.len());
    Ok((hits_at_k(&ps, &ns, k)?, mrr_shared_pool(&ps, &ns)?))
}

/// Encodes and scores once per seed (the seed drives inference-time
/// negative sampling) and aggregates mean ± std.
pub fn evaluate(
    model: &Model,
    name: &str,
    split: &EdgeSplit,
    features: &Features,
    protocol: &Protocol,
    seeds: &[u64],
) -> Result<Vec<EvalResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("evaluate needs at least one seed".into()));
    }
    let mut hits = Vec::with_capacity(seeds.len());
    let mut mrrs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let (h, m) = evaluate_once(model, split, features, protocol, s)?;
        hits.push(h);
        mrrs.push(m);
    }
    let pool = split_pairs(split, protocol.split)?.1.len();
    let desc = protocol.describe(pool);
    Ok(vec![
        EvalResult::from_values(name, &format!("HR@{}", protocol.k), hits, desc.clone()),
        EvalResult::from_values(name, "MRR", mrrs, desc),
    ])
}

/// Heuristic rows, scored on the training graph.
pub fn evaluate_heuristic(
    split: &EdgeSplit,
    kind: HeuristicKind,
    protocol: &Protocol,
) -> Result<Vec<EvalResult>> {
    let (pos, neg) = split_pairs(split, protocol.split)?;
    let g = split.train_graph();
    let ps = heuristic_score(&g, pos, kind)?;
    let ns = heuristic_score(&g, neg, kind)?;
    let k = protocol.k.min(ns.len());
    let desc = protocol.describe(neg.len());
    let name = kind.to_string();
    Ok(vec![
        EvalResult::from_values(&name, &format!("HR@{}", protocol.k), vec![hits_at_k(&ps, &ns, k)?], desc.clone()),
        EvalResult::from_values(&name, "MRR", vec![mrr_shared_pool(&ps, &ns)?], desc),
    ])
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn gcn_single_edge_swap() {
        let g = CsrGraph::from_edges(2, [(0, 1)]).unwrap();
        let neg = NegativeGraphSet::empty(2, 1);
        let y = gcn_neg_forward(&g, &neg, &array![[1.0], [0.0]], &[array![[1.0]]], &[0.0]).unwrap();
        assert_eq!(y, array![[0.0], [1.0]]);
    }

    #[test]
    fn random_features_zero_scale_and_determinism() {
        let x = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(random_feature_variant(&x, 0.0, 3).unwrap(), x);
        let a = random_feature_variant(&x, 0.1, 3).unwrap();
        assert_eq!(a, random_feature_variant(&x, 0.1, 3).unwrap());
        assert!(a.data().iter().zip(x.data().iter()).all(|(p, q)| (p - q).abs() <= 0.1));
        assert!(random_feature_variant(&x, -1.0, 3).is_err());
    }

    #[test]
    fn single_seed_has_zero_std() {
        let r = EvalResult::from_values("m", "HR@1", vec![0.5], String::new());
        assert_eq!(r.std, 0.0);
        assert_eq!(r.percent(), "50.00 ± 0.00");
        assert_eq!(format_results(&[r]), "m\tHR@1\t0.500000\t0.000000\t0.500000\n");
    }
}
