//! Reverse-mode gradients of every tape primitive against central finite
//! differences, plus the small forward examples for MLPs and Adam.

mod common;

use std::sync::Arc;

use common::{numeric_gradient, random_graph, random_matrix, rel_err, Dense};
use ndarray::array;
use proptest::prelude::*;
use yygnn::graph::{degrees, SparseOperator};
use yygnn::negsample::{sample_negative_set, SamplerMode};
use yygnn::nn::{Activation, AdamConfig, AdamState, Features, MlpParams, Tape, Var};
use yygnn::propagation::{EnergyOperators, PropagationConfig};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

/// Builds `Σ R ⊙ f(x)` on a fresh tape and returns its value and `∂/∂x`.
fn value_and_grad(x: &Dense, r: &Dense, f: &dyn Fn(&mut Tape, Var) -> Var) -> (f64, Dense) {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv);
    let rv = tape.constant(r.clone());
    let prod = tape.hadamard(out, rv).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    (tape.scalar(loss), g.get(xv).cloned().unwrap_or_else(|| Dense::zeros(x.raw_dim())))
}

fn check_op(name: &str, x: &Dense, out_shape: (usize, usize), seed: u64, f: &dyn Fn(&mut Tape, Var) -> Var) {
    let r = random_matrix(out_shape.0, out_shape.1, seed);
    let (_, analytic) = value_and_grad(x, &r, f);
    let numeric = numeric_gradient(x, H, |p| value_and_grad(p, &r, f).0);
    let e = rel_err(&analytic, &numeric);
    assert!(e < TOL, "{name}: rel err {e:e}");
}

/// Entries bounded away from zero so ReLU finite differences never straddle
/// the kink.
fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Dense {
    random_matrix(rows, cols, seed).mapv(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

#[test]
fn elementwise_and_dense_primitives() {
    let x = away_from_zero(4, 3, 1);
    let w = random_matrix(3, 2, 2);
    let b = random_matrix(1, 3, 3);
    let other = random_matrix(4, 3, 4);
    check_op("matmul left", &x, (4, 2), 10, &|t, v| {
        let wv = t.constant(w.clone());
        t.matmul(v, wv).unwrap()
    });
    let xw = random_matrix(5, 4, 5);
    check_op("matmul right", &x, (5, 3), 11, &|t, v| {
        let a = t.constant(xw.clone());
        t.matmul(a, v).unwrap()
    });
    check_op("row bias input", &x, (4, 3), 12, &|t, v| {
        let bv = t.constant(b.clone());
        t.add_row_bias(v, bv).unwrap()
    });
    check_op("row bias bias", &b, (4, 3), 13, &|t, v| {
        let xv = t.constant(x.clone());
        t.add_row_bias(xv, v).unwrap()
    });
    check_op("relu", &x, (4, 3), 14, &|t, v| t.relu(v));
    check_op("sigmoid", &x, (4, 3), 15, &|t, v| t.sigmoid(v));
    check_op("add", &x, (4, 3), 16, &|t, v| {
        let o = t.constant(other.clone());
        t.add(o, v).unwrap()
    });
    check_op("sub", &x, (4, 3), 17, &|t, v| {
        let o = t.constant(other.clone());
        t.sub(o, v).unwrap()
    });
    check_op("scale", &x, (4, 3), 18, &|t, v| t.scale(v, -2.5));
    check_op("hadamard", &x, (4, 3), 19, &|t, v| {
        let o = t.constant(other.clone());
        t.hadamard(v, o).unwrap()
    });
    check_op("hadamard self", &x, (4, 3), 20, &|t, v| t.hadamard(v, v).unwrap());
    let idx = Arc::new(vec![3, 0, 3, 1, 3]);
    check_op("gather rows (repeated)", &x, (5, 3), 21, &|t, v| t.gather_rows(v, idx.clone()).unwrap());
    let mask = Arc::new(array![[2.0, 0.0, 2.0], [0.0, 2.0, 2.0], [2.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
    check_op("mask", &x, (4, 3), 22, &|t, v| t.mask(v, mask.clone()).unwrap());
    check_op("sum", &x, (1, 1), 23, &|t, v| t.sum(v));
}

#[test]
fn feature_matmul_dense_and_sparse() {
    let w = random_matrix(6, 2, 30);
    let mut x = Dense::zeros((5, 6));
    x[[0, 1]] = 1.0;
    x[[2, 5]] = 0.5;
    x[[4, 0]] = -2.0;
    for feats in [Features::Dense(x.clone()), Features::auto(x.clone())] {
        let f = Arc::new(feats);
        check_op("feature matmul", &w, (5, 2), 31, &|t, v| t.feature_matmul(f.clone(), v).unwrap());
    }
    assert!(matches!(Features::auto(x), Features::Sparse(_)));
}

#[test]
fn sparse_apply_gradient() {
    let g = random_graph(7, 0.4, 40);
    let deg: Vec<f64> = degrees(&g).into_iter().map(|d| d as f64).collect();
    let op = Arc::new(SparseOperator::normalized_adjacency(&g, &deg));
    let y = random_matrix(7, 3, 41);
    check_op("sparse apply", &y, (7, 3), 42, &|t, v| t.sparse_apply(op.clone(), v).unwrap());
}

#[test]
fn link_loss_gradient_both_inputs() {
    let pos = random_matrix(3, 1, 50).mapv(|v| 4.0 * v);
    let neg = random_matrix(6, 1, 51).mapv(|v| 4.0 * v);
    let f = |p: &Dense, n: &Dense| -> (f64, Dense, Dense) {
        let mut t = Tape::new();
        let (pv, nv) = (t.param(p.clone()), t.param(n.clone()));
        let l = t.link_loss(pv, nv, 2).unwrap();
        let g = t.backward(l).unwrap();
        (t.scalar(l), g.get(pv).unwrap().clone(), g.get(nv).unwrap().clone())
    };
    let (_, gp, gn) = f(&pos, &neg);
    let np = numeric_gradient(&pos, H, |p| f(p, &neg).0);
    let nn = numeric_gradient(&neg, H, |n| f(&pos, n).0);
    assert!(rel_err(&gp, &np) < TOL);
    assert!(rel_err(&gn, &nn) < TOL);
}

fn propagate_case(seed: u64, k: usize, lower_bound: bool) {
    let g = random_graph(8, 0.35, seed);
    let neg = sample_negative_set(&g, k, SamplerMode::SourceUniform, seed + 1).unwrap();
    let ops = Arc::new(EnergyOperators::new(&g, &neg).unwrap());
    let cfg = PropagationConfig {
        lambda: 1.3,
        lambda_k: (0..k).map(|i| 0.4 + 0.5 * i as f64).collect(),
        learnable_lambda_k: true,
        gamma: 0.2,
        alpha: 0.3,
        steps: 1,
        lower_bound,
    };
    let y = random_matrix(8, 3, seed + 2);
    let fx = random_matrix(8, 3, seed + 3);
    let lk = Dense::from_shape_vec((1, k), cfg.lambda_k.clone()).unwrap();
    let r = random_matrix(8, 3, seed + 4);
    // Two layers so the Y input and the F input take different paths.
    let run = |y: &Dense, fx: &Dense, lk: &Dense| -> (f64, Dense, Dense, Dense) {
        let mut t = Tape::new();
        let (yv, fv, lv) = (t.param(y.clone()), t.param(fx.clone()), t.param(lk.clone()));
        let y1 = t.propagate(ops.clone(), &cfg, yv, fv, lv).unwrap();
        let y2 = t.propagate(ops.clone(), &cfg, y1, fv, lv).unwrap();
        let rv = t.constant(r.clone());
        let p = t.hadamard(y2, rv).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        (t.scalar(l), g.get(yv).unwrap().clone(), g.get(fv).unwrap().clone(), g.get(lv).unwrap().clone())
    };
    let (_, gy, gf, gl) = run(&y, &fx, &lk);
    let ny = numeric_gradient(&y, H, |p| run(p, &fx, &lk).0);
    let nf = numeric_gradient(&fx, H, |p| run(&y, p, &lk).0);
    let nl = numeric_gradient(&lk, H, |p| run(&y, &fx, p).0);
    let tag = format!("seed {seed} K={k} bound={lower_bound}");
    assert!(rel_err(&gy, &ny) < TOL, "{tag}: dY {:e}", rel_err(&gy, &ny));
    assert!(rel_err(&gf, &nf) < TOL, "{tag}: dF {:e}", rel_err(&gf, &nf));
    assert!(rel_err(&gl, &nl) < TOL, "{tag}: dλ {:e}", rel_err(&gl, &nl));
}

#[test]
fn propagate_gradient_with_and_without_bound() {
    for seed in [60, 70, 80] {
        for k in [1, 2] {
            propagate_case(seed, k, true);
            propagate_case(seed, k, false);
        }
    }
}

#[test]
fn half_squared_norm_gradient_is_identity() {
    let y = random_matrix(3, 2, 90);
    let mut t = Tape::new();
    let v = t.param(y.clone());
    let sq = t.hadamard(v, v).unwrap();
    let half = t.scale(sq, 0.5);
    let l = t.sum(half);
    let g = t.backward(l).unwrap();
    assert!(rel_err(g.get(v).unwrap(), &y) < 1e-15);
}

#[test]
fn zero_path_gives_zero_gradients() {
    let y = random_matrix(3, 2, 91);
    let w = random_matrix(2, 2, 92);
    let mut t = Tape::new();
    let (yv, wv) = (t.param(y), t.param(w));
    let h = t.matmul(yv, wv).unwrap();
    let z = t.scale(h, 0.0);
    let l = t.sum(z);
    let g = t.backward(l).unwrap();
    assert!(g.get(yv).unwrap().iter().all(|&v| v == 0.0));
    assert!(g.get(wv).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::new();
    let v = t.param(random_matrix(2, 2, 93));
    assert!(t.backward(v).is_err());
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let g = random_graph(9, 0.3, 94);
        let neg = sample_negative_set(&g, 2, SamplerMode::GlobalUniform, 95).unwrap();
        let ops = Arc::new(EnergyOperators::new(&g, &neg).unwrap());
        let cfg = PropagationConfig {
            lambda_k: vec![0.5, 1.5],
            learnable_lambda_k: true,
            ..Default::default()
        };
        let mut t = Tape::new();
        let y = t.param(random_matrix(9, 3, 96));
        let lk = t.param(array![[0.5, 1.5]]);
        let y1 = t.propagate(ops, &cfg, y, y, lk).unwrap();
        let l = t.sum(y1);
        let gr = t.backward(l).unwrap();
        (t.value(y1).clone(), gr.get(y).unwrap().clone(), gr.get(lk).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn mlp_identity_and_zero_weight_examples() {
    let x = random_matrix(4, 3, 100);
    let id = MlpParams {
        weights: vec![Dense::eye(3)],
        biases: vec![Dense::zeros((1, 3))],
        activations: vec![Activation::Identity],
    };
    assert_eq!(id.forward(&x).unwrap(), x);
    let bias = array![[0.5, -1.0]];
    let zero = MlpParams {
        weights: vec![Dense::zeros((3, 2))],
        biases: vec![bias.clone()],
        activations: vec![Activation::Identity],
    };
    let out = zero.forward(&x).unwrap();
    assert!(out.outer_iter().all(|r| r == bias.row(0)));
}

#[test]
fn mlp_matches_hand_algebra() {
    let x = random_matrix(4, 3, 101);
    let m = MlpParams {
        weights: vec![random_matrix(3, 5, 102), random_matrix(5, 2, 103)],
        biases: vec![random_matrix(1, 5, 104), random_matrix(1, 2, 105)],
        activations: vec![Activation::Relu, Activation::Identity],
    };
    let mut expect = Dense::zeros((4, 2));
    for i in 0..4 {
        for o in 0..2 {
            let mut acc = m.biases[1][[0, o]];
            for h in 0..5 {
                let mut pre = m.biases[0][[0, h]];
                for c in 0..3 {
                    pre += x[[i, c]] * m.weights[0][[c, h]];
                }
                acc += pre.max(0.0) * m.weights[1][[h, o]];
            }
            expect[[i, o]] = acc;
        }
    }
    assert!((m.forward(&x).unwrap() - expect).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn mlp_tape_gradient() {
    let x = away_from_zero(5, 3, 110);
    let m = MlpParams::standard(3, 4, 2, 2, 111).unwrap();
    let r = random_matrix(5, 2, 112);
    let loss = |m: &MlpParams| -> f64 { (m.forward(&x).unwrap() * &r).sum() };
    let mut t = Tape::new();
    let p = m.register(&mut t);
    let xv = t.constant(x.clone());
    let out = m.forward_tape(&mut t, &p, xv).unwrap();
    let rv = t.constant(r.clone());
    let pr = t.hadamard(out, rv).unwrap();
    let l = t.sum(pr);
    let g = t.backward(l).unwrap();
    for layer in 0..2 {
        let nw = numeric_gradient(&m.weights[layer], H, |w| {
            let mut mm = m.clone();
            mm.weights[layer] = w.clone();
            loss(&mm)
        });
        let nb = numeric_gradient(&m.biases[layer], H, |b| {
            let mut mm = m.clone();
            mm.biases[layer] = b.clone();
            loss(&mm)
        });
        assert!(rel_err(g.get(p.0[layer]).unwrap(), &nw) < TOL);
        assert!(rel_err(g.get(p.1[layer]).unwrap(), &nb) < TOL);
    }
}

#[test]
fn adam_examples() {
    let mut p = array![[1.0, -1.0]];
    let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[(1, 2)]);
    let zero = Dense::zeros((1, 2));
    adam.step(&mut [&mut p], &[Some(&zero)], &[]).unwrap();
    assert_eq!(p, array![[1.0, -1.0]]);

    let g = array![[0.3, -0.7]];
    let mut q = array![[0.0, 0.0]];
    let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..Default::default() }, &[(1, 2)]);
    for _ in 0..50 {
        adam.step(&mut [&mut q], &[Some(&g)], &[]).unwrap();
    }
    assert!(q[[0, 0]] < 0.0 && q[[0, 1]] > 0.0);

    // m̂ = 1, v̂ = 1 after bias correction, so the step is 0.1 / (1 + 1e-8).
    let mut s = array![[2.0]];
    let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[(1, 1)]);
    adam.step(&mut [&mut s], &[Some(&array![[1.0]])], &[]).unwrap();
    assert!((s[[0, 0]] - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gather_then_sum_counts_rows(rows in proptest::collection::vec(0usize..5, 1..12)) {
        let x = random_matrix(5, 2, 7);
        let mut t = Tape::new();
        let v = t.param(x);
        let gth = t.gather_rows(v, Arc::new(rows.clone())).unwrap();
        let l = t.sum(gth);
        let g = t.backward(l).unwrap();
        let grad = g.get(v).unwrap();
        for i in 0..5 {
            let count = rows.iter().filter(|&&r| r == i).count() as f64;
            prop_assert_eq!(grad[[i, 0]], count);
            prop_assert_eq!(grad[[i, 1]], count);
        }
    }
}
