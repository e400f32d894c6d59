use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{EncoderOps, Model, ModelConfig, TapeParams};
use crate::error::{Error, Result};
use crate::eval::hits_at_k;
use crate::graph::{CsrGraph, Edge, EdgeSplit, FeatureMatrix, Matrix};
use crate::negsample::{sample_supervision_pairs, SamplerMode};
use crate::nn::{AdamConfig, AdamState, Features, Gradients, Tape, Var};
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Epoch count `M`.
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Supervision negatives per training edge, `N`.
    pub neg_per_edge: usize,
    /// Training edges per loss batch; `0` is full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs; `0` disables model selection.
    pub eval_every: usize,
    pub eval_k: usize,
    /// Stop after this many validations without improvement; `0` never stops.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            weight_decay: 0.0,
            neg_per_edge: 1,
            batch_size: 0,
            seed: 0,
            eval_every: 5,
            eval_k: 100,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.neg_per_edge == 0 {
            return Err(Error::InvalidArgument("need at least one supervision negative per edge".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::InvalidArgument("eval k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed loss over the epoch's batches.
    pub loss: f64,
    pub val_hits: Option<f64>,
    /// Energy at `Y^(0)` and `Y^(T)` and `Q` at `Y^(T)` in the last batch
    /// (propagation encoder only).
    pub energy_first: Option<f64>,
    pub energy_last: Option<f64>,
    pub q_last: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation score (the last epoch without
    /// validation).
    pub model: Model,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
}

/// Fixed negative-graph seed used when validating during training.
pub(crate) fn validation_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX - 1)
}

fn validation_hits(model: &Model, split: &EdgeSplit, features: &Features, k: usize, seed: u64) -> Result<f64> {
    let g_train = split.train_graph();
    let y = model.encode(&g_train, features, validation_seed(seed))?.y;
    let pos = model.score_pairs(&y, &split.valid_edges)?;
    let neg = model.score_pairs(&y, &split.valid_negatives)?;
    hits_at_k(&pos, &neg, k.min(neg.len()))
}

fn param_names(model: &Model) -> Vec<String> {
    let mut names = Vec::new();
    for (part, mlp) in [("base", &model.base), ("decoder", &model.decoder)] {
        names.extend((0..mlp.num_layers()).map(|i| format!("{part}.w{i}")));
        names.extend((0..mlp.num_layers()).map(|i| format!("{part}.b{i}")));
    }
    names.push("lambda_k".into());
    names
}

struct TapeLoss {
    tape: Tape,
    params: TapeParams,
    fx: Option<Var>,
    y: Var,
    loss: Var,
}

fn tape_loss(
    model: &Model,
    features: &Arc<Features>,
    ops: &EncoderOps,
    pos_pairs: &[Edge],
    neg_pairs: &[Edge],
    per_edge: usize,
    rng: &mut Rng,
) -> Result<TapeLoss> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let (fx, y) = model.encode_tape(&mut tape, &params, features, ops, rng)?;
    let pos = model.score_tape(&mut tape, &params, y, pos_pairs, rng)?;
    let neg = model.score_tape(&mut tape, &params, y, neg_pairs, rng)?;
    let loss = tape.link_loss(pos, neg, per_edge)?;
    Ok(TapeLoss { tape, params, fx, y, loss })
}

fn gradient_list(t: &TapeLoss, grads: &Gradients) -> Vec<Option<Matrix>> {
    let mut out = Vec::new();
    for (w, b) in [&t.params.base, &t.params.decoder] {
        out.extend(w.iter().map(|v| grads.get(*v).cloned()));
        out.extend(b.iter().map(|v| grads.get(*v).cloned()));
    }
    out.push(grads.get(t.params.lambda_k).cloned());
    out
}

/// Loss and parameter gradients for one batch, in checkpoint tensor order:
/// base weights, base biases, decoder weights, decoder biases, then `λ_K^k`
/// as a `1 × K` row (`None` when `λ_K^k` is fixed).
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub grads: Vec<Option<Matrix>>,
}

/// Evaluates the training loss on the tape (negative graphs drawn from
/// `negset_seed`) and backpropagates through the whole pipeline.
pub fn loss_gradients(
    model: &Model,
    g_train: &CsrGraph,
    x: &Features,
    negset_seed: u64,
    pos_pairs: &[Edge],
    neg_pairs: &[Edge],
    per_edge: usize,
) -> Result<LossGradients> {
    let ops = model.encoder_ops(g_train, negset_seed)?;
    let features = Arc::new(x.clone());
    let mut rng = seeded(negset_seed);
    let t = tape_loss(model, &features, &ops, pos_pairs, neg_pairs, per_edge, &mut rng)?;
    let grads = t.tape.backward(t.loss)?;
    Ok(LossGradients {
        loss: t.tape.scalar(t.loss),
        grads: gradient_list(&t, &grads),
    })
}

/// One optimisation step on a batch of training pairs. Returns the batch
/// loss and, for the propagation encoder, `(E(Y^0), E(Y^T), Q(Y^T))`.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut Model,
    adam: &mut AdamState,
    features: &Arc<Features>,
    ops: &EncoderOps,
    pos_pairs: &[Edge],
    neg_pairs: &[Edge],
    per_edge: usize,
    rng: &mut Rng,
    epoch: usize,
) -> Result<(f64, Option<(f64, f64, f64)>)> {
    let t = tape_loss(model, features, ops, pos_pairs, neg_pairs, per_edge, rng)?;
    let value = t.tape.scalar(t.loss);
    if !value.is_finite() {
        return Err(Error::Divergence { epoch, loss: value });
    }
    let energies = match (ops, t.fx) {
        (EncoderOps::YinYang(ops), Some(fx)) => {
            let cfg = model.propagation_config();
            let f = t.tape.value(fx);
            let yt = t.tape.value(t.y);
            Some((ops.energy(f, f, &cfg)?, ops.energy(yt, f, &cfg)?, ops.q_value(yt, &cfg)?))
        }
        _ => None,
    };
    let grads = t.tape.backward(t.loss)?;
    let grad_list = gradient_list(&t, &grads);
    let grad_refs: Vec<Option<&Matrix>> = grad_list.iter().map(Option::as_ref).collect();

    let names = param_names(model);
    let mut lambda_k = Matrix::from_shape_vec((1, model.lambda_k.len()), model.lambda_k.clone()).expect("1 x K");
    {
        let Model { base, decoder, .. } = model;
        let mut refs: Vec<&mut Matrix> = Vec::new();
        refs.extend(base.weights.iter_mut());
        refs.extend(base.biases.iter_mut());
        refs.extend(decoder.weights.iter_mut());
        refs.extend(decoder.biases.iter_mut());
        refs.push(&mut lambda_k);
        adam.step(&mut refs, &grad_refs, &names)?;
    }
    model.lambda_k = lambda_k.row(0).iter().map(|v| v.max(0.0)).collect();
    Ok((value, energies))
}

/// End-to-end training: per epoch, fresh negative graphs for the encoder and
/// fresh supervision negatives for the loss, then one Adam step per batch.
pub fn train(
    split: &EdgeSplit,
    x: &FeatureMatrix,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if split.train_edges.is_empty() {
        return Err(Error::InvalidArgument("no training edges".into()));
    }
    let g_train = split.train_graph();
    x.check_rows(&g_train)?;
    let fingerprint = super::DataFingerprint::of(&g_train, x, split.split_seed);
    let mut model = Model::new(model_cfg, x.cols(), fingerprint, derive_seed(cfg.seed, 0))?;
    let features = Arc::new(Features::auto(x.data().clone()));
    let shapes: Vec<(usize, usize)> = model
        .base
        .weights
        .iter()
        .chain(&model.base.biases)
        .chain(&model.decoder.weights)
        .chain(&model.decoder.biases)
        .map(|m| m.dim())
        .chain(std::iter::once((1, model.lambda_k.len())))
        .collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &shapes,
    );
    let can_validate = cfg.eval_every > 0 && !split.valid_edges.is_empty() && !split.valid_negatives.is_empty();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0usize;
    let mut rng = seeded(derive_seed(cfg.seed, 1));

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let ops = model.encoder_ops(&g_train, derive_seed(cfg.seed, 1000 + 3 * e))?;
        let sup = sample_supervision_pairs(
            &g_train,
            &split.train_edges,
            cfg.neg_per_edge,
            SamplerMode::GlobalUniform,
            derive_seed(cfg.seed, 1001 + 3 * e),
        )?;
        let mut order: Vec<usize> = (0..split.train_edges.len()).collect();
        let batch = if cfg.batch_size == 0 { order.len() } else { cfg.batch_size };
        if batch < order.len() {
            order.shuffle(&mut seeded(derive_seed(cfg.seed, 1002 + 3 * e)));
        }
        let mut epoch_loss = 0.0;
        let mut energies = None;
        for chunk in order.chunks(batch) {
            let pos: Vec<Edge> = chunk.iter().map(|&i| split.train_edges[i]).collect();
            let neg: Vec<Edge> = chunk
                .iter()
                .flat_map(|&i| sup.pairs[i * sup.per_edge..(i + 1) * sup.per_edge].iter().copied())
                .collect();
            let (loss, en) = train_batch(&mut model, &mut adam, &features, &ops, &pos, &neg, cfg.neg_per_edge, &mut rng, epoch)?;
            epoch_loss += loss;
            energies = en;
        }
        let validate_now = can_validate && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let val_hits = if validate_now {
            Some(validation_hits(&model, split, &features, cfg.eval_k, cfg.seed)?)
        } else {
            None
        };
        history.push(EpochLog {
            epoch,
            loss: epoch_loss,
            val_hits,
            energy_first: energies.map(|e| e.0),
            energy_last: energies.map(|e| e.1),
            q_last: energies.map(|e| e.2),
        });
        if let Some(v) = val_hits {
            if best.as_ref().map_or(true, |(b, _, _)| v > *b) {
                best = Some((v, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((v, epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch: epoch,
            best_val: Some(v),
        },
        None => TrainOutcome {
            best_epoch: history.len() - 1,
            model,
            history,
            best_val: None,
        },
    })
}
