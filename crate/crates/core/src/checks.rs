//! Self-contained property batteries. Each suite generates its own
//! instances, compares against an independent oracle and reports the
//! observed value next to its tolerance.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::{heuristic_score, hits_at_k, mrr, mrr_shared_pool, HeuristicKind};
use crate::graph::{CsrGraph, Matrix};
use crate::model::{link_loss, loss_gradients, DataFingerprint, EncoderKind, Model, ModelConfig};
use crate::negsample::{sample_negative_set, NegativeGraphSet, SamplerMode};
use crate::nn::Features;
use crate::propagation::{
    closed_form_minimizer, quadratic_step, step_size_bound, EmbeddingState, EnergyOperators, LaplacianKind,
    PropagationConfig,
};
use crate::rng::{derive_seed, seeded, Rng as SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Descent,
    Convexity,
    Isomorphism,
    MetricsOracle,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Gradients,
        Suite::Descent,
        Suite::Convexity,
        Suite::Isomorphism,
        Suite::MetricsOracle,
    ];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Self::Gradients),
            "descent" => Ok(Self::Descent),
            "convexity" => Ok(Self::Convexity),
            "isomorphism" => Ok(Self::Isomorphism),
            "metrics-oracle" | "metrics" => Ok(Self::MetricsOracle),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite `{other}` (gradients, descent, convexity, isomorphism, metrics-oracle)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gradients => "gradients",
            Self::Descent => "descent",
            Self::Convexity => "convexity",
            Self::Isomorphism => "isomorphism",
            Self::MetricsOracle => "metrics-oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub observed: f64,
    /// Human-readable bound, e.g. `"< 1e-5"`.
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub lines: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.lines.is_empty() && self.lines.iter().all(|l| l.pass)
    }

    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|l| !l.pass).count()
    }

    fn push(&mut self, name: impl Into<String>, observed: f64, tolerance: &str, pass: bool) {
        self.lines.push(CheckLine {
            name: name.into(),
            observed,
            tolerance: tolerance.to_string(),
            pass,
        });
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(
                f,
                "[{}] {} {}: observed {:.3e}, required {}",
                self.suite,
                if l.pass { "ok  " } else { "FAIL" },
                l.name,
                l.observed,
                l.tolerance
            )?;
        }
        write!(
            f,
            "[{}] {}/{} checks passed",
            self.suite,
            self.lines.len() - self.failures(),
            self.lines.len()
        )
    }
}

/// Runs `suite` with its default instance count.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Gradients => gradients(20, seed),
        Suite::Descent => descent(20, seed),
        Suite::Convexity => convexity(10, seed),
        Suite::Isomorphism => isomorphism(),
        Suite::MetricsOracle => metrics_oracle(1000, 20, seed),
    }
}

// ---------------------------------------------------------------------------
// instance generators

/// Erdős–Rényi graph; never empty.
pub fn random_graph(n: usize, p: f64, rng: &mut SeededRng) -> Result<CsrGraph> {
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
    CsrGraph::from_edges(n, edges)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn frob(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// gradients

/// A tiny end-to-end training problem.
struct GradientCase {
    g: CsrGraph,
    x: Features,
    model: Model,
    pos: Vec<(usize, usize)>,
    neg: Vec<(usize, usize)>,
    per_edge: usize,
    negset_seed: u64,
}

fn gradient_case(seed: u64) -> Result<GradientCase> {
    let mut rng = seeded(seed);
    let n = rng.gen_range(6..=12);
    let d = rng.gen_range(2..=4);
    let k = rng.gen_range(1..=2);
    let g = random_graph(n, 0.35, &mut rng)?;
    let cfg = ModelConfig {
        encoder: EncoderKind::YinYang,
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
    let fp = DataFingerprint {
        graph: String::new(),
        features: String::new(),
        split_seed: 0,
    };
    let mut model = Model::new(cfg, 3, fp, seed)?;
    // Nonzero biases keep pre-activations off the ReLU kink, where central
    // differences would see a one-sided slope.
    for b in model.base.biases.iter_mut().chain(model.decoder.biases.iter_mut()) {
        b.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    let pos: Vec<_> = g.edges().take(6).collect();
    let per_edge = 2;
    let neg = (0..pos.len() * per_edge).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
    Ok(GradientCase {
        x: Features::Dense(random_matrix(n, 3, &mut rng)),
        g,
        model,
        pos,
        neg,
        per_edge,
        negset_seed: rng.gen(),
    })
}

fn param_tensors(m: &mut Model) -> Vec<&mut Matrix> {
    let Model { base, decoder, .. } = m;
    let mut out: Vec<&mut Matrix> = Vec::new();
    out.extend(base.weights.iter_mut());
    out.extend(base.biases.iter_mut());
    out.extend(decoder.weights.iter_mut());
    out.extend(decoder.biases.iter_mut());
    out
}

impl GradientCase {
    fn plain_loss(&self, m: &Model) -> Result<f64> {
        let y = m.encode(&self.g, &self.x, self.negset_seed)?.y;
        let p = m.score_pairs(&y, &self.pos)?;
        let q = m.score_pairs(&y, &self.neg)?;
        link_loss(&p, &q, self.per_edge)
    }

    fn num_params(&self) -> usize {
        let mut m = self.model.clone();
        param_tensors(&mut m).iter().map(|t| t.len()).sum::<usize>() + m.lambda_k.len()
    }

    /// Whole-parameter-vector relative error between the tape gradient and
    /// central differences of the tape-free loss.
    fn relative_error(&self, h: f64) -> Result<f64> {
        let lg = loss_gradients(&self.model, &self.g, &self.x, self.negset_seed, &self.pos, &self.neg, self.per_edge)?;
        let groups = lg.grads.len();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for gi in 0..groups {
            let len = if gi + 1 == groups {
                self.model.lambda_k.len()
            } else {
                let mut m = self.model.clone();
                param_tensors(&mut m)[gi].len()
            };
            let analytic = lg.grads[gi]
                .as_ref()
                .ok_or_else(|| Error::Tape(format!("parameter group {gi} received no gradient")))?;
            for idx in 0..len {
                let eval = |delta: f64| -> Result<f64> {
                    let mut m = self.model.clone();
                    if gi + 1 == groups {
                        m.lambda_k[idx] += delta;
                    } else {
                        let t = &mut param_tensors(&mut m)[gi];
                        let c = t.ncols();
                        t[(idx / c, idx % c)] += delta;
                    }
                    self.plain_loss(&m)
                };
                let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
                let a = analytic.iter().nth(idx).copied().unwrap_or(0.0);
                diff2 += (a - numeric).powi(2);
                a2 += a * a;
                n2 += numeric * numeric;
            }
        }
        Ok(diff2.sqrt() / f64::max(a2, n2).sqrt().max(1e-300))
    }
}

/// Tape gradients of the full pipeline (base MLP, unrolled propagation with
/// the gate path, decoder, loss) against central differences.
pub fn gradients(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: Suite::Gradients,
        lines: Vec::new(),
    };
    for i in 0..instances {
        let case = gradient_case(derive_seed(seed, i as u64))?;
        let err = case.relative_error(1e-5)?;
        let p = &case.model.config.prop;
        report.push(
            format!(
                "instance {i} (n={}, d={}, K={}, T={}, {} params) relative error",
                case.g.num_nodes(),
                case.model.config.hidden,
                p.lambda_k.len(),
                p.steps,
                case.num_params()
            ),
            err,
            "< 1e-5",
            err < 1e-5,
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// descent

pub struct DescentOutcome {
    pub alpha: f64,
    /// Largest energy increase over the first `layers` steps.
    pub max_increase: f64,
    /// First step at which `‖∇E‖_F < grad_tol`, if reached.
    pub converged_at: Option<usize>,
}

/// Halves `α` from 1 until `layers` propagation steps never raise the
/// monitored energy by more than `tol`, then iterates up to `max_steps`
/// looking for `‖∇E‖_F < grad_tol`.
pub fn descent_run(
    ops: &EnergyOperators,
    fx: &Matrix,
    cfg: &PropagationConfig,
    layers: usize,
    tol: f64,
    grad_tol: f64,
    max_steps: usize,
) -> Result<DescentOutcome> {
    let mut cfg = PropagationConfig { alpha: 1.0, ..cfg.clone() };
    let mut max_increase = f64::INFINITY;
    for _ in 0..40 {
        let mut state = EmbeddingState::initial(fx.clone());
        let mut e = ops.energy(&state.y, fx, &cfg)?;
        max_increase = f64::NEG_INFINITY;
        for _ in 0..layers {
            state = ops.step(&state, fx, &cfg)?;
            let next = ops.energy(&state.y, fx, &cfg)?;
            max_increase = max_increase.max(next - e);
            e = next;
        }
        if max_increase <= tol {
            break;
        }
        cfg.alpha /= 2.0;
    }
    let mut state = EmbeddingState::initial(fx.clone());
    let mut converged_at = None;
    for t in 0..max_steps {
        if frob(&ops.gradient(&state.y, fx, &cfg)?) < grad_tol {
            converged_at = Some(t);
            break;
        }
        state = ops.step(&state, fx, &cfg)?;
    }
    Ok(DescentOutcome {
        alpha: cfg.alpha,
        max_increase,
        converged_at,
    })
}

/// The monitored energy is non-increasing across 50 layers and the
/// iteration reaches a stationary point.
pub fn descent(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: Suite::Descent,
        lines: Vec::new(),
    };
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, 100 + i as u64));
        let n = rng.gen_range(6..=12);
        let d = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=2);
        let g = random_graph(n, 0.3, &mut rng)?;
        let negset = sample_negative_set(&g, k, SamplerMode::SourceUniform, rng.gen())?;
        let ops = EnergyOperators::new(&g, &negset)?;
        let cfg = PropagationConfig {
            lambda: rng.gen_range(0.5..2.0),
            lambda_k: (0..k).map(|_| rng.gen_range(0.5..2.0)).collect(),
            gamma: rng.gen_range(-0.5..0.5),
            lower_bound: true,
            ..Default::default()
        };
        let fx = random_matrix(n, d, &mut rng);
        let out = descent_run(&ops, &fx, &cfg, 50, 1e-12, 1e-6, 5000)?;
        report.push(
            format!("instance {i} (n={n}, K={k}, alpha={}) max energy increase over 50 layers", out.alpha),
            out.max_increase,
            "<= 1e-12",
            out.max_increase <= 1e-12,
        );
        let steps = out.converged_at.map_or(f64::INFINITY, |t| t as f64);
        report.push(
            format!("instance {i} steps until gradient norm < 1e-6"),
            steps,
            "< 5000",
            out.converged_at.is_some(),
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// convexity

/// Plain descent on the quadratic energy from `F`, at 0.9 × the Frobenius
/// step bound, compared with the dense linear solve. Returns the final
/// distance and the step count (`None` when `max_steps` ran out).
pub fn closed_form_gap(
    fx: &Matrix,
    g: &CsrGraph,
    negset: &NegativeGraphSet,
    cfg: &PropagationConfig,
    tol: f64,
    max_steps: usize,
) -> Result<(f64, Option<usize>)> {
    let bound = step_size_bound(g, negset, cfg, LaplacianKind::Combinatorial)?;
    let cfg = PropagationConfig {
        alpha: 0.9 * bound.alpha_max,
        ..cfg.clone()
    };
    let target = closed_form_minimizer(fx, g, negset, &cfg)?;
    let mut y = fx.clone();
    for t in 0..max_steps {
        let gap = frob(&(&y - &target));
        if gap < tol {
            return Ok((gap, Some(t)));
        }
        y = quadratic_step(&y, fx, g, negset, &cfg)?;
    }
    Ok((frob(&(&y - &target)), None))
}

/// Instances satisfying the Hessian condition reach the closed-form
/// minimizer.
pub fn convexity(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: Suite::Convexity,
        lines: Vec::new(),
    };
    let mut i = 0;
    let mut attempt = 0u64;
    while i < instances {
        attempt += 1;
        if attempt > 100 * instances as u64 {
            return Err(Error::InvalidArgument("could not generate convex instances".into()));
        }
        let mut rng = seeded(derive_seed(seed, 10_000 + attempt));
        let n = rng.gen_range(6..=10);
        let k = rng.gen_range(1..=2);
        let g = random_graph(n, 0.35, &mut rng)?;
        let negset = sample_negative_set(&g, k, SamplerMode::SourceUniform, rng.gen())?;
        let cfg = PropagationConfig {
            lambda: rng.gen_range(0.2..1.5),
            lambda_k: (0..k).map(|_| rng.gen_range(0.05..1.0)).collect(),
            lower_bound: false,
            ..Default::default()
        };
        let bound = step_size_bound(&g, &negset, &cfg, LaplacianKind::Combinatorial)?;
        if bound.hessian_lower_bound < 0.05 {
            continue;
        }
        let fx = random_matrix(n, 2, &mut rng);
        let (gap, steps) = closed_form_gap(&fx, &g, &negset, &cfg, 1e-6, 20_000)?;
        report.push(
            format!(
                "instance {i} (n={n}, K={k}, Hessian bound {:.3}, {} steps) distance to linear solve",
                bound.hessian_lower_bound,
                steps.map_or("no convergence in 20000".into(), |s| s.to_string())
            ),
            gap,
            "< 1e-6",
            gap < 1e-6,
        );
        i += 1;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// isomorphism

/// `‖y₂ − y₃‖` on the six-cycle with identical features, without and with
/// the negative edges `{0,2}`, `{0,4}` that break the symmetry swapping 2
/// and 3.
pub fn hexagon_gaps() -> Result<(f64, f64)> {
    let hex = CsrGraph::from_edges(6, (0..6).map(|i| (i, (i + 1) % 6)))?;
    let fx = Matrix::from_shape_fn((6, 2), |(_, c)| [1.0, 0.5][c]);
    let cfg = PropagationConfig {
        steps: 8,
        alpha: 0.2,
        ..Default::default()
    };
    let gap = |negset: &NegativeGraphSet| -> Result<f64> {
        let y = EnergyOperators::new(&hex, negset)?.forward(&fx, &cfg)?.y;
        Ok((&y.row(2) - &y.row(3)).iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let plain = gap(&NegativeGraphSet::empty(6, 1))?;
    let broken = gap(&NegativeGraphSet::from_graphs(
        vec![CsrGraph::from_edges(6, [(0, 2), (0, 4)])?],
        0,
    )?)?;
    Ok((plain, broken))
}

pub fn isomorphism() -> Result<SuiteReport> {
    let (plain, broken) = hexagon_gaps()?;
    let mut report = SuiteReport {
        suite: Suite::Isomorphism,
        lines: Vec::new(),
    };
    report.push("hexagon ‖y2 − y3‖ without negative edges", plain, "< 1e-12", plain < 1e-12);
    report.push("hexagon ‖y2 − y3‖ with symmetry-breaking negative edges", broken, "> 1e-6", broken > 1e-6);
    Ok(report)
}

// ---------------------------------------------------------------------------
// metric oracles

fn brute_hits(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    let hits = pos.iter().filter(|&&p| neg.iter().filter(|&&n| n > p).count() < k).count();
    hits as f64 / pos.len() as f64
}

fn brute_mrr(pos: &[f64], neg: &[f64]) -> f64 {
    let total: f64 = pos
        .iter()
        .map(|&p| 1.0 / (1 + neg.iter().filter(|&&n| n > p).count()) as f64)
        .sum();
    total / pos.len() as f64
}

fn brute_heuristics(g: &CsrGraph, i: usize, j: usize) -> [f64; 3] {
    let ni: HashSet<usize> = g.neighbors(i).iter().copied().collect();
    let nj: HashSet<usize> = g.neighbors(j).iter().copied().collect();
    let mut out = [0.0; 3];
    for &z in ni.intersection(&nj) {
        let dz = g.neighbors(z).len() as f64;
        out[0] += 1.0;
        out[1] += 1.0 / dz.ln();
        out[2] += 1.0 / dz;
    }
    out
}

/// Number of fuzz instances whose HR@k or MRR differ from rank counting.
pub fn metric_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = seeded(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let (np, nn) = (rng.gen_range(1..30), rng.gen_range(1..30));
        // A coarse grid makes ties common.
        let pos: Vec<f64> = (0..np).map(|_| rng.gen_range(0..20) as f64 / 4.0).collect();
        let neg: Vec<f64> = (0..nn).map(|_| rng.gen_range(0..20) as f64 / 4.0).collect();
        let k = rng.gen_range(1..=nn);
        let per: Vec<(f64, Vec<f64>)> = pos.iter().map(|&p| (p, neg.clone())).collect();
        let want = brute_mrr(&pos, &neg);
        if hits_at_k(&pos, &neg, k)? != brute_hits(&pos, &neg, k)
            || mrr(&per)? != want
            || mrr_shared_pool(&pos, &neg)? != want
        {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Largest deviation of CN/AA/RA from set intersection over all pairs of
/// random graphs with 10 to 50 nodes.
pub fn heuristic_max_deviation(graphs: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for gi in 0..graphs {
        let mut rng = seeded(derive_seed(seed, gi as u64));
        let n = rng.gen_range(10..=50);
        let g = random_graph(n, rng.gen_range(0.05..0.4), &mut rng)?;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|p| p.0 != p.1).collect();
        let kinds = [HeuristicKind::CommonNeighbors, HeuristicKind::AdamicAdar, HeuristicKind::ResourceAllocation];
        let scores: Vec<Vec<f64>> = kinds.iter().map(|&k| heuristic_score(&g, &pairs, k)).collect::<Result<_>>()?;
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            let want = brute_heuristics(&g, i, j);
            for h in 0..3 {
                worst = worst.max((scores[h][idx] - want[h]).abs());
            }
        }
    }
    Ok(worst)
}

pub fn metrics_oracle(instances: usize, graphs: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: Suite::MetricsOracle,
        lines: Vec::new(),
    };
    let bad = metric_mismatches(instances, seed)?;
    report.push(
        format!("HR@k / MRR mismatches against rank counting over {instances} fuzz instances"),
        bad as f64,
        "== 0",
        bad == 0,
    );
    let dev = heuristic_max_deviation(graphs, seed)?;
    report.push(
        format!("CN/AA/RA max deviation from set intersection over {graphs} graphs"),
        dev,
        "<= 1e-12",
        dev <= 1e-12,
    );
    Ok(report)
}
