//! Encoder + HadamardMLP decoder, the link loss, training, checkpoints and
//! top-k prediction.

mod checkpoint;
mod topk;
mod train;

pub use topk::{predict_topk, Scorer, TopK};
pub use train::{loss_gradients, train, EpochLog, LossGradients, TrainConfig, TrainOutcome};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Axis;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::gcn_neg_operator;
use crate::graph::{CsrGraph, Edge, FeatureMatrix, Matrix};
use crate::negsample::{sample_negative_set, SamplerMode};
use crate::nn::{softplus, Activation, Features, MlpParams, Tape, TapeInput, Var};
use crate::propagation::{EmbeddingState, EnergyOperators, PropagationConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Base MLP followed by `T` descent layers on the signed energy.
    YinYang,
    /// `ReLU[(Ã − (λ_K/K)Ã⁻) Y W]` layers.
    GcnNeg,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yinyang" => Ok(Self::YinYang),
            "gcn_neg" | "gcn" => Ok(Self::GcnNeg),
            other => Err(Error::InvalidArgument(format!("unknown encoder `{other}`"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::YinYang => "yinyang",
            Self::GcnNeg => "gcn_neg",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Embedding width `d`.
    pub hidden: usize,
    /// Base MLP depth `P` (GCN depth for the baseline).
    pub base_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub sampler: SamplerMode,
    pub prop: PropagationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::YinYang,
            hidden: 64,
            base_layers: 2,
            decoder_layers: 2,
            dropout: 0.0,
            sampler: SamplerMode::SourceUniform,
            prop: PropagationConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.prop.validate()?;
        if self.hidden == 0 || self.base_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::InvalidArgument("layer counts and width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Identifies the data a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFingerprint {
    /// Fingerprint of the training graph (the graph the encoder propagates on).
    pub graph: String,
    pub features: String,
    pub split_seed: u64,
}

impl DataFingerprint {
    pub fn of(g_train: &CsrGraph, x: &FeatureMatrix, split_seed: u64) -> Self {
        Self {
            graph: g_train.fingerprint(),
            features: x.fingerprint(),
            split_seed,
        }
    }
}

/// Everything a checkpoint holds: base weights `W`, decoder `θ`, the
/// negative-graph weights and the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub base: MlpParams,
    pub decoder: MlpParams,
    pub lambda_k: Vec<f64>,
    pub fingerprint: DataFingerprint,
}

/// Tape handles for one forward pass.
pub(crate) struct TapeParams {
    pub base: (Vec<Var>, Vec<Var>),
    pub decoder: (Vec<Var>, Vec<Var>),
    pub lambda_k: Var,
}

/// Per-epoch encoder context: sampled negatives turned into operators.
pub(crate) enum EncoderOps {
    YinYang(Arc<EnergyOperators>),
    GcnNeg(Arc<crate::graph::SparseOperator>),
}

impl Model {
    pub fn new(config: ModelConfig, in_dim: usize, fingerprint: DataFingerprint, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let base = match config.encoder {
            EncoderKind::YinYang => MlpParams::standard(in_dim, d, d, config.base_layers, seed)?,
            EncoderKind::GcnNeg => {
                let mut dims = vec![in_dim];
                dims.extend(std::iter::repeat(d).take(config.base_layers));
                MlpParams::init(&dims, &vec![Activation::Relu; config.base_layers], seed)?
            }
        };
        let decoder = MlpParams::standard(d, d, 1, config.decoder_layers, seed.wrapping_add(1))?;
        Ok(Self {
            lambda_k: config.prop.lambda_k.clone(),
            config,
            base,
            decoder,
            fingerprint,
        })
    }

    pub fn num_neg_graphs(&self) -> usize {
        self.lambda_k.len()
    }

    /// Propagation settings with the model's current `λ_K^k`.
    pub fn propagation_config(&self) -> PropagationConfig {
        PropagationConfig {
            lambda_k: self.lambda_k.clone(),
            ..self.config.prop.clone()
        }
    }

    pub(crate) fn encoder_ops(&self, g_train: &CsrGraph, negset_seed: u64) -> Result<EncoderOps> {
        let negset = sample_negative_set(g_train, self.num_neg_graphs(), self.config.sampler, negset_seed)?;
        Ok(match self.config.encoder {
            EncoderKind::YinYang => EncoderOps::YinYang(Arc::new(EnergyOperators::new(g_train, &negset)?)),
            EncoderKind::GcnNeg => EncoderOps::GcnNeg(Arc::new(gcn_neg_operator(g_train, &negset, &self.lambda_k)?)),
        })
    }

    /// One inference pass; deterministic given `negset_seed`.
    pub fn encode(&self, g_train: &CsrGraph, x: &Features, negset_seed: u64) -> Result<EmbeddingState> {
        if x.rows() != g_train.num_nodes() {
            return Err(Error::dims("feature rows", g_train.num_nodes(), x.rows()));
        }
        match self.encoder_ops(g_train, negset_seed)? {
            EncoderOps::YinYang(ops) => {
                let fx = self.base.forward_features(x)?;
                ops.forward(&fx, &self.propagation_config())
            }
            EncoderOps::GcnNeg(op) => {
                let mut y = x.dot(&self.base.weights[0])?;
                y = op.apply(&y).mapv(|v| v.max(0.0));
                for w in &self.base.weights[1..] {
                    y = op.apply(&y.dot(w)).mapv(|v| v.max(0.0));
                }
                Ok(EmbeddingState {
                    y,
                    t: self.base.num_layers(),
                    q_trace: Vec::new(),
                })
            }
        }
    }

    /// [`Model::encode`] after checking the data fingerprint, unless
    /// `allow_mismatch` is set.
    pub fn encode_checked(
        &self,
        g_train: &CsrGraph,
        x: &FeatureMatrix,
        negset_seed: u64,
        allow_mismatch: bool,
    ) -> Result<EmbeddingState> {
        if !allow_mismatch {
            self.check_fingerprint(g_train, x)?;
        }
        self.encode(g_train, &Features::auto(x.data().clone()), negset_seed)
    }

    pub fn check_fingerprint(&self, g_train: &CsrGraph, x: &FeatureMatrix) -> Result<()> {
        let (g, f) = (g_train.fingerprint(), x.fingerprint());
        if g != self.fingerprint.graph {
            return Err(Error::Fingerprint(format!(
                "graph fingerprint {g} does not match checkpoint {}",
                self.fingerprint.graph
            )));
        }
        if f != self.fingerprint.features {
            return Err(Error::Fingerprint(format!(
                "feature fingerprint {f} does not match checkpoint {}",
                self.fingerprint.features
            )));
        }
        Ok(())
    }

    /// Decoder logits `MLP(y_i ⊙ y_j)` for each pair.
    pub fn score_pairs(&self, y: &Matrix, pairs: &[Edge]) -> Result<Vec<f64>> {
        if y.ncols() != self.decoder.in_dim() {
            return Err(Error::dims("embedding width", self.decoder.in_dim(), y.ncols()));
        }
        let n = y.nrows();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::NodeOutOfBounds { id: i.max(j), num_nodes: n });
        }
        const CHUNK: usize = 4096;
        let chunks: Vec<Result<Vec<f64>>> = pairs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let src: Vec<usize> = chunk.iter().map(|e| e.0).collect();
                let dst: Vec<usize> = chunk.iter().map(|e| e.1).collect();
                let h = y.select(Axis(0), &src) * y.select(Axis(0), &dst);
                Ok(self.decoder.forward(&h)?.column(0).to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(pairs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub(crate) fn register(&self, tape: &mut Tape) -> TapeParams {
        let base = self.base.register(tape);
        let decoder = self.decoder.register(tape);
        let lk = Matrix::from_shape_vec((1, self.lambda_k.len()), self.lambda_k.clone()).expect("1 x K");
        let lambda_k = if self.config.prop.learnable_lambda_k && self.config.encoder == EncoderKind::YinYang {
            tape.param(lk)
        } else {
            tape.constant(lk)
        };
        TapeParams { base, decoder, lambda_k }
    }

    /// Encoder forward on the tape; returns the base output (YinYang only)
    /// and `Y^(T)`.
    pub(crate) fn encode_tape(
        &self,
        tape: &mut Tape,
        params: &TapeParams,
        x: &Arc<Features>,
        ops: &EncoderOps,
        rng: &mut Rng,
    ) -> Result<(Option<Var>, Var)> {
        let p = self.config.dropout;
        match ops {
            EncoderOps::YinYang(ops) => {
                let fx = self
                    .base
                    .forward_tape_with(tape, &params.base, TapeInput::Features(x.clone()), Some((rng, p)))?;
                let cfg = self.propagation_config();
                let mut y = fx;
                for _ in 0..cfg.steps {
                    y = tape.propagate(ops.clone(), &cfg, y, fx, params.lambda_k)?;
                }
                Ok((Some(fx), y))
            }
            EncoderOps::GcnNeg(op) => {
                let z = tape.feature_matmul(x.clone(), params.base.0[0])?;
                let mut y = tape.sparse_apply(op.clone(), z)?;
                y = tape.relu(y);
                for l in 1..self.base.num_layers() {
                    if p > 0.0 {
                        let mask = crate::nn::dropout_mask(tape.value(y).dim(), p, rng);
                        y = tape.mask(y, Arc::new(mask))?;
                    }
                    let z = tape.matmul(y, params.base.0[l])?;
                    y = tape.sparse_apply(op.clone(), z)?;
                    y = tape.relu(y);
                }
                Ok((None, y))
            }
        }
    }

    /// Decoder logits on the tape, one row per pair.
    pub(crate) fn score_tape(
        &self,
        tape: &mut Tape,
        params: &TapeParams,
        y: Var,
        pairs: &[Edge],
        rng: &mut Rng,
    ) -> Result<Var> {
        let src = Arc::new(pairs.iter().map(|e| e.0).collect::<Vec<_>>());
        let dst = Arc::new(pairs.iter().map(|e| e.1).collect::<Vec<_>>());
        let a = tape.gather_rows(y, src)?;
        let b = tape.gather_rows(y, dst)?;
        let h = tape.hadamard(a, b)?;
        self.decoder
            .forward_tape_with(tape, &params.decoder, TapeInput::Var(h), Some((rng, self.config.dropout)))
    }
}

/// Decoder logit for a single pair, `MLP(y_i ⊙ y_j)`.
pub fn hadamard_score(y_i: &[f64], y_j: &[f64], decoder: &MlpParams) -> Result<f64> {
    if y_i.len() != y_j.len() || y_i.len() != decoder.in_dim() {
        return Err(Error::dims("hadamard_score width", decoder.in_dim(), y_i.len().max(y_j.len())));
    }
    let h = Matrix::from_shape_fn((1, y_i.len()), |(_, c)| y_i[c] * y_j[c]);
    Ok(decoder.forward(&h)?[[0, 0]])
}

/// `Σ_e [softplus(−pos_e) + (1/N) Σ_a softplus(neg_{e,a})]`: the negative
/// log-likelihood of positives and `N` negatives per edge.
pub fn link_loss(pos_logits: &[f64], neg_logits: &[f64], per_edge: usize) -> Result<f64> {
    if per_edge == 0 || neg_logits.len() != pos_logits.len() * per_edge {
        return Err(Error::dims("negative logits", pos_logits.len() * per_edge, neg_logits.len()));
    }
    if pos_logits.iter().chain(neg_logits).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(pos_logits.iter().map(|&p| softplus(-p)).sum::<f64>()
        + neg_logits.iter().map(|&n| softplus(n)).sum::<f64>() / per_edge as f64)
}
