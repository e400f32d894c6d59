use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;

use super::{Features, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Matrix;
use crate::rng::{seeded, Rng};

/// Input of a tape forward: a recorded value or constant features.
pub enum TapeInput {
    Var(Var),
    Features(Arc<Features>),
}

/// Inverted-dropout mask: entries are `0` with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask(dim: (usize, usize), p: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 - p;
    Matrix::from_shape_fn(dim, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Identity => "identity",
        })
    }
}

/// Dense layers `h ← act(h W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
    pub activations: Vec<Activation>,
}

impl MlpParams {
    /// Weights uniform in `±1/√fan_in`, zero biases. `dims` lists the input
    /// width followed by every layer's output width.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "MLP needs one activation per layer: {} widths, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("MLP widths must be positive".into()));
        }
        let mut rng = seeded(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(Matrix::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..=bound)));
            biases.push(Matrix::zeros((1, w[1])));
        }
        Ok(Self {
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Hidden layers with ReLU and a linear output layer.
    pub fn standard(in_dim: usize, hidden: usize, out_dim: usize, layers: usize, seed: u64) -> Result<Self> {
        let layers = layers.max(1);
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(hidden).take(layers - 1));
        dims.push(out_dim);
        let mut acts = vec![Activation::Relu; layers - 1];
        acts.push(Activation::Identity);
        Self::init(&dims, &acts, seed)
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().expect("at least one layer").ncols()
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(|m| m.len()).sum()
    }

    /// Registers parameters on the tape, returning `(weights, biases)`.
    pub fn register(&self, tape: &mut Tape) -> (Vec<Var>, Vec<Var>) {
        let w = self.weights.iter().map(|m| tape.param(m.clone())).collect();
        let b = self.biases.iter().map(|m| tape.param(m.clone())).collect();
        (w, b)
    }

    fn check_in(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::dims("MLP input width", self.in_dim(), cols));
        }
        Ok(())
    }

    /// Forward on the tape, given registered parameter handles.
    pub fn forward_tape(&self, tape: &mut Tape, params: &(Vec<Var>, Vec<Var>), input: Var) -> Result<Var> {
        self.forward_tape_with(tape, params, TapeInput::Var(input), None)
    }

    /// Forward on the tape with constant (possibly sparse) input features.
    pub fn forward_tape_features(
        &self,
        tape: &mut Tape,
        params: &(Vec<Var>, Vec<Var>),
        x: Arc<Features>,
    ) -> Result<Var> {
        self.forward_tape_with(tape, params, TapeInput::Features(x), None)
    }

    /// General tape forward. With `dropout = Some((rng, p))` every hidden
    /// activation is multiplied by an inverted-dropout mask.
    pub fn forward_tape_with(
        &self,
        tape: &mut Tape,
        params: &(Vec<Var>, Vec<Var>),
        input: TapeInput,
        mut dropout: Option<(&mut Rng, f64)>,
    ) -> Result<Var> {
        let mut h = match input {
            TapeInput::Var(v) => {
                self.check_in(tape.value(v).ncols())?;
                tape.matmul(v, params.0[0])?
            }
            TapeInput::Features(x) => {
                self.check_in(x.cols())?;
                tape.feature_matmul(x, params.0[0])?
            }
        };
        for l in 0..self.num_layers() {
            if l > 0 {
                h = tape.matmul(h, params.0[l])?;
            }
            h = tape.add_row_bias(h, params.1[l])?;
            if self.activations[l] == Activation::Relu {
                h = tape.relu(h);
            }
            if l + 1 < self.num_layers() {
                if let Some((rng, p)) = dropout.as_mut() {
                    if *p > 0.0 {
                        let mask = dropout_mask(tape.value(h).dim(), *p, rng);
                        h = tape.mask(h, Arc::new(mask))?;
                    }
                }
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_in(x.ncols())?;
        let mut h = x.dot(&self.weights[0]);
        self.finish_plain(&mut h, 0);
        for l in 1..self.num_layers() {
            h = h.dot(&self.weights[l]);
            self.finish_plain(&mut h, l);
        }
        Ok(h)
    }

    pub fn forward_features(&self, x: &Features) -> Result<Matrix> {
        self.check_in(x.cols())?;
        let mut h = x.dot(&self.weights[0])?;
        self.finish_plain(&mut h, 0);
        for l in 1..self.num_layers() {
            h = h.dot(&self.weights[l]);
            self.finish_plain(&mut h, l);
        }
        Ok(h)
    }

    fn finish_plain(&self, h: &mut Matrix, l: usize) {
        *h += &self.biases[l];
        if self.activations[l] == Activation::Relu {
            h.mapv_inplace(|v| v.max(0.0));
        }
    }
}
