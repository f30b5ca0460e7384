//! Policy, value, context-estimator and visual-encoder networks, plus the Adam
//! optimizer, running input normalization and the weight file format.

mod cenet;
mod checkpoint;
mod encoder;
mod heads;
mod norm;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tensor};

pub use cenet::{kl_standard_normal, CENet, CenetLoss, HISTORY, LATENT_DIM};
pub use checkpoint::{load_weights, save_weights, Checkpoint, Entry};
pub use encoder::{EncoderSpec, VisualEncoder, EMBED_DIM};
pub use heads::{gaussian_entropy, gaussian_log_prob, PolicyNet, PolicyOutput, ValueNet, ACTION_DIM, OBS_DIM, PRIV_DIM};
pub use norm::RunningMeanStd;
pub use optim::Adam;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] DiffError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?} in the checkpoint, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Anything that owns trainable tensors.
///
/// Parameters are listed in a fixed order with stable dotted names; optimizers and
/// checkpoints rely on both.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Clears accumulated gradients.
    fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

/// Hidden-layer widths of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self { widths: vec![512, 256, 128] }
    }
}

impl MlpSpec {
    pub fn new(widths: &[usize]) -> Self {
        Self { widths: widths.to_vec() }
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform weights in `±gain/√fan_in`, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { weight: Tensor::param(w, &[fan_in, fan_out]), bias: Tensor::param(vec![0.0; fan_out], &[fan_out]) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::param(vec![0.0; fan_in * fan_out], &[fan_in, fan_out]),
            bias: Tensor::param(vec![0.0; fan_out], &[fan_out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Tanh multilayer perceptron with a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `zero_output` zero-initializes the last layer so the untrained net outputs 0.
    pub fn new(input: usize, spec: &MlpSpec, output: usize, zero_output: bool, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(spec.widths.len() + 1);
        let mut fan_in = input;
        for &w in &spec.widths {
            layers.push(Linear::new(fan_in, w, 1.0, rng));
            fan_in = w;
        }
        layers.push(if zero_output { Linear::zeros(fan_in, output) } else { Linear::new(fan_in, output, 1.0, rng) });
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_features)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NetError> {
        if x.ndim() != 2 || x.shape()[1] != self.input_dim() {
            return Err(NetError::Shape { what: "mlp input", expected: vec![x.shape().first().copied().unwrap_or(0), self.input_dim()], got: x.shape().to_vec() });
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| prefixed(&i.to_string(), l.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().enumerate().flat_map(|(i, l)| prefixed(&i.to_string(), l.params_mut())).collect()
    }
}

/// Checks that `t` is `[n, dim]`.
pub(crate) fn expect_cols(t: &Tensor, dim: usize, what: &'static str) -> Result<usize, NetError> {
    if t.ndim() != 2 || t.shape()[1] != dim {
        let n = t.shape().first().copied().unwrap_or(0);
        return Err(NetError::Shape { what, expected: vec![n, dim], got: t.shape().to_vec() });
    }
    Ok(t.shape()[0])
}
