use std::sync::Arc;

use ndarray::{Axis, Zip};

use super::{column_sums, sigmoid, softplus, Features};
use crate::error::{Error, Result};
use crate::graph::{Matrix, SparseOperator};
use crate::propagation::{q_weights, EnergyOperators, PropagationConfig};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    FeatureMatMul(Arc<Features>, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    /// Application of a symmetric sparse operator.
    SparseApply(Arc<SparseOperator>, Var),
    Mask(Var, Arc<Matrix>),
    Sum(Var),
    LinkLoss { pos: Var, neg: Var, per_edge: usize },
    Propagate(Box<PropagateRecord>),
}

#[derive(Debug)]
struct PropagateRecord {
    ops: Arc<EnergyOperators>,
    cfg: PropagationConfig,
    y: Var,
    fx: Var,
    lambda_k: Var,
    sigma: f64,
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a single backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(ctx: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dims(ctx, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::dims("matmul inner dimension", va.ncols(), vb.nrows()));
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `X W` for constant features `X`.
    pub fn feature_matmul(&mut self, x: Arc<Features>, w: Var) -> Result<Var> {
        let out = x.dot(self.value(w))?;
        let rg = self.rg(w);
        Ok(self.push(out, Op::FeatureMatMul(x, w), rg))
    }

    /// Adds the `1 x d` row `b` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(Error::dims("bias width", va.ncols(), vb.ncols()));
        }
        let out = va + vb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRowBias(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Hadamard(a, b), rg))
    }

    /// Rows `idx` of `a`, in order, repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.nrows()) {
            return Err(Error::NodeOutOfBounds {
                id: bad,
                num_nodes: va.nrows(),
            });
        }
        let out = va.select(Axis(0), &idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// `S a` for a symmetric sparse operator `S`.
    pub fn sparse_apply(&mut self, s: Arc<SparseOperator>, a: Var) -> Result<Var> {
        if s.num_nodes() != self.value(a).nrows() {
            return Err(Error::dims("sparse operator rows", s.num_nodes(), self.value(a).nrows()));
        }
        let out = s.apply(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(out, Op::SparseApply(s, a), rg))
    }

    /// Element-wise product with a constant mask (e.g. inverted dropout).
    pub fn mask(&mut self, a: Var, mask: Arc<Matrix>) -> Result<Var> {
        same_shape("mask", self.value(a), &mask)?;
        let out = self.value(a) * &*mask;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mask(a, mask), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Matrix::from_elem((1, 1), s), Op::Sum(a), rg)
    }

    /// `Σ softplus(−pos) + (1/N) Σ softplus(neg)` over `m x 1` positive and
    /// `mN x 1` negative logits.
    pub fn link_loss(&mut self, pos: Var, neg: Var, per_edge: usize) -> Result<Var> {
        let (vp, vn) = (self.value(pos), self.value(neg));
        if vp.ncols() != 1 || vn.ncols() != 1 {
            return Err(Error::InvalidArgument("link loss expects column logits".into()));
        }
        if per_edge == 0 || vn.nrows() != vp.nrows() * per_edge {
            return Err(Error::dims("negative logits", vp.nrows() * per_edge, vn.nrows()));
        }
        let l = vp.iter().map(|&p| softplus(-p)).sum::<f64>()
            + vn.iter().map(|&n| softplus(n)).sum::<f64>() / per_edge as f64;
        let rg = self.rg(pos) || self.rg(neg);
        Ok(self.push(
            Matrix::from_elem((1, 1), l),
            Op::LinkLoss { pos, neg, per_edge },
            rg,
        ))
    }

    /// One descent layer of the lower-level energy. `lambda_k` is a `1 x K`
    /// node holding the negative weights (trainable or constant); `cfg`
    /// supplies everything else.
    pub fn propagate(
        &mut self,
        ops: Arc<EnergyOperators>,
        cfg: &PropagationConfig,
        y: Var,
        fx: Var,
        lambda_k: Var,
    ) -> Result<Var> {
        let lk = self.value(lambda_k);
        if lk.nrows() != 1 || lk.ncols() != ops.num_neg_graphs() {
            return Err(Error::dims("lambda_k width", ops.num_neg_graphs(), lk.ncols()));
        }
        let mut cfg = cfg.clone();
        cfg.lambda_k = lk.row(0).to_vec();
        let (out, _q, sigma) = ops.layer(self.value(y), self.value(fx), &cfg)?;
        let rg = self.rg(y) || self.rg(fx) || self.rg(lambda_k);
        Ok(self.push(
            out,
            Op::Propagate(Box::new(PropagateRecord {
                ops,
                cfg,
                y,
                fx,
                lambda_k,
                sigma,
            })),
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let acc = |v: Var, delta: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::FeatureMatMul(x, w) => {
                    let gw = match &**x {
                        Features::Dense(m) => m.t().dot(&g),
                        Features::Sparse(s) => s.t_dot(&g),
                    };
                    acc(*w, gw, &mut grads);
                }
                Op::AddRowBias(a, b) => {
                    if self.rg(*b) {
                        acc(*b, column_sums(&g), &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &o| if o <= 0.0 { *gv = 0.0 });
                    acc(*a, ga, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &s| *gv *= s * (1.0 - s));
                    acc(*a, ga, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone(), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g, &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Scale(a, c) => acc(*a, g * *c, &mut grads),
                Op::Hadamard(a, b) => {
                    if self.rg(*a) {
                        acc(*a, &g * self.value(*b), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, &g * self.value(*a), &mut grads);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Matrix::zeros(self.value(*a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::SparseApply(s, a) => acc(*a, s.apply(&g), &mut grads),
                Op::Mask(a, m) => acc(*a, g * &**m, &mut grads),
                Op::Sum(a) => {
                    let ga = Matrix::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(*a, ga, &mut grads);
                }
                Op::LinkLoss { pos, neg, per_edge } => {
                    let s = g[[0, 0]];
                    if self.rg(*pos) {
                        let gp = self.value(*pos).mapv(|p| -s * sigmoid(-p));
                        acc(*pos, gp, &mut grads);
                    }
                    if self.rg(*neg) {
                        let w = s / *per_edge as f64;
                        let gn = self.value(*neg).mapv(|n| w * sigmoid(n));
                        acc(*neg, gn, &mut grads);
                    }
                }
                Op::Propagate(rec) => {
                    let (gy, gf, gl) = self.propagate_backward(rec, &g);
                    if let Some(gl) = gl {
                        acc(rec.lambda_k, gl, &mut grads);
                    }
                    if let Some(gf) = gf {
                        acc(rec.fx, gf, &mut grads);
                    }
                    acc(rec.y, gy, &mut grads);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate_backward(
        &self,
        rec: &PropagateRecord,
        g: &Matrix,
    ) -> (Matrix, Option<Matrix>, Option<Matrix>) {
        let PropagateRecord {
            ops,
            cfg,
            y,
            sigma,
            ..
        } = rec;
        let y = self.value(*y);
        let alpha = cfg.alpha;
        let k = cfg.lambda_k.len() as f64;
        let fit = ops.fit_scale();

        // Output is linear in Y apart from σ(Q(Y)); the linear part is
        // symmetric, so its adjoint is the same map applied to G.
        let mut rg_ = g.clone();
        crate::propagation::scale_rows(&mut rg_, fit);
        let mut gy = g - &(&rg_ * alpha);
        if cfg.lambda != 0.0 {
            gy.scaled_add(-alpha * cfg.lambda, &ops.pos_laplacian(g));
        }
        let neg_lap_y: Vec<Matrix> = (0..cfg.lambda_k.len()).map(|i| ops.neg_laplacian(i, y)).collect();
        for (i, &lk) in cfg.lambda_k.iter().enumerate() {
            if lk != 0.0 && *sigma != 0.0 {
                gy.scaled_add(alpha * sigma * lk / k, &ops.neg_laplacian(i, g));
            }
        }
        let gf = self.rg(rec.fx).then(|| rg_ * alpha);

        // <G, L̃_k Y>
        let inner: Vec<f64> = neg_lap_y.iter().map(|m| crate::graph::frob_dot(g, m)).collect();
        let mut gl = vec![0.0; cfg.lambda_k.len()];
        for i in 0..gl.len() {
            gl[i] = alpha * sigma / k * inner[i];
        }
        if cfg.lower_bound {
            let g_sigma: f64 = alpha / k
                * cfg.lambda_k.iter().zip(&inner).map(|(l, v)| l * v).sum::<f64>();
            let g_q = g_sigma * sigma * (1.0 - sigma);
            if g_q != 0.0 {
                let w = q_weights(&cfg.lambda_k);
                for (i, m) in neg_lap_y.iter().enumerate() {
                    gy.scaled_add(-2.0 * g_q * w[i], m);
                }
                let total: f64 = cfg.lambda_k.iter().sum();
                if total != 0.0 {
                    // q_k = tr[YᵀL̃⁻_k Y] = <Y, L̃⁻_k Y>
                    let q: Vec<f64> = neg_lap_y.iter().map(|m| crate::graph::frob_dot(y, m)).collect();
                    let weighted: f64 = cfg.lambda_k.iter().zip(&q).map(|(l, v)| l * v).sum();
                    for j in 0..gl.len() {
                        gl[j] += g_q * (-k * q[j] / total + k * weighted / (total * total));
                    }
                }
            }
        }
        let gl = self
            .rg(rec.lambda_k)
            .then(|| Matrix::from_shape_vec((1, gl.len()), gl).expect("1 x K"));
        (gy, gf, gl)
    }
}
