use std::f64::consts::PI;

use rand::Rng;

use super::{expect_cols, prefixed, Mlp, MlpSpec, Module, NetError};
use crate::diffcore::Tensor;

pub const OBS_DIM: usize = 16;
pub const PRIV_DIM: usize = 43;
pub const ACTION_DIM: usize = 4;

/// Gaussian policy over pre-squash actions.
///
/// The network produces a mean `μ` in an unbounded space; actions are `tanh(u)` with
/// `u ~ N(μ, σ²)` during training and `tanh(μ)` at evaluation, giving normalized
/// commands in `[-1, 1]⁴`. The first three scale to body rates in `±rate_max`, the last
/// maps to thrust `(a + 1) / 2 ∈ [0, 1]`.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub log_std: Tensor,
    pub rate_max: f64,
    /// Added to the raw thrust output so a zero network hovers.
    offset: Tensor,
    latent_dim: usize,
    embed_dim: usize,
}

pub struct PolicyOutput {
    /// Pre-squash mean, `[n, 4]`.
    pub mean: Tensor,
    /// State-independent log standard deviation, `[4]`.
    pub log_std: Tensor,
}

impl PolicyNet {
    pub fn new(spec: &MlpSpec, latent_dim: usize, embed_dim: usize, rate_max: f64, hover_thrust: f64, init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mlp = Mlp::new(OBS_DIM + latent_dim + embed_dim, spec, ACTION_DIM, true, rng);
        let bias = (2.0 * hover_thrust.clamp(0.01, 0.99) - 1.0).atanh();
        Self {
            mlp,
            log_std: Tensor::param(vec![init_log_std; ACTION_DIM], &[ACTION_DIM]),
            rate_max,
            offset: Tensor::new(vec![0.0, 0.0, 0.0, bias], &[ACTION_DIM]),
            latent_dim,
            embed_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        OBS_DIM + self.latent_dim + self.embed_dim
    }

    /// Mean and log-std for observations `o [n,16]`, latents `z` and embeddings `e`.
    pub fn forward(&self, o: &Tensor, z: &Tensor, e: &Tensor) -> Result<PolicyOutput, NetError> {
        let n = expect_cols(o, OBS_DIM, "policy observation")?;
        expect_cols(z, self.latent_dim, "policy latent")?;
        expect_cols(e, self.embed_dim, "policy embedding")?;
        if z.shape()[0] != n || e.shape()[0] != n {
            return Err(NetError::Shape { what: "policy batch", expected: vec![n], got: vec![z.shape()[0], e.shape()[0]] });
        }
        let x = Tensor::concat(&[o, z, e], 1)?;
        let mean = self.mlp.forward(&x)?.add(&self.offset)?;
        Ok(PolicyOutput { mean, log_std: self.log_std.clone() })
    }

    /// Deterministic normalized action `tanh(μ)`.
    pub fn mean_action(&self, o: &Tensor, z: &Tensor, e: &Tensor) -> Result<Tensor, NetError> {
        Ok(self.forward(o, z, e)?.mean.tanh())
    }

    /// Body-rate command `[n,3]` and normalized thrust `[n,1]` for normalized actions.
    pub fn to_control(&self, a: &Tensor) -> Result<(Tensor, Tensor), NetError> {
        expect_cols(a, ACTION_DIM, "action")?;
        let rates = a.narrow(1, 0, 3)?.scale(self.rate_max);
        let thrust = a.narrow(1, 3, 1)?.add_scalar(1.0).scale(0.5);
        Ok((rates, thrust))
    }
}

impl PolicyOutput {
    /// Reparameterized sample `u = μ + σ ε` and its squashed action `tanh(u)`.
    pub fn sample(&self, noise: &Tensor) -> Result<(Tensor, Tensor), NetError> {
        let u = self.mean.add(&self.log_std.exp().mul(noise)?)?;
        let a = u.tanh();
        Ok((u, a))
    }
}

/// Diagonal Gaussian log-density of `u` summed over the last axis, `[n]`.
pub fn gaussian_log_prob(mean: &Tensor, log_std: &Tensor, u: &Tensor) -> Result<Tensor, NetError> {
    let z = u.sub(mean)?.div(&log_std.exp())?;
    let d = mean.shape()[1] as f64;
    let per = z.square().scale(-0.5).sub(log_std)?;
    Ok(per.sum_axis(1, false)?.add_scalar(-0.5 * d * (2.0 * PI).ln()))
}

/// Entropy of a diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &Tensor) -> Tensor {
    let d = log_std.numel() as f64;
    log_std.sum().add_scalar(0.5 * d * (2.0 * PI * std::f64::consts::E).ln())
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<_> = prefixed("mlp", self.mlp.params()).collect();
        v.push(("log_std".into(), &self.log_std));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<_> = prefixed("mlp", self.mlp.params_mut()).collect();
        v.push(("log_std".into(), &mut self.log_std));
        v
    }
}

/// Critic over privileged observations `s [n,43]` and latents `z`.
///
/// The raw network output is multiplied by `output_scale` so returns of a few
/// hundred are reachable without large final-layer weights.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub mlp: Mlp,
    pub output_scale: f64,
    latent_dim: usize,
}

impl ValueNet {
    pub fn new(spec: &MlpSpec, latent_dim: usize, output_scale: f64, rng: &mut impl Rng) -> Self {
        Self { mlp: Mlp::new(PRIV_DIM + latent_dim, spec, 1, false, rng), output_scale, latent_dim }
    }

    /// Values `[n]`.
    pub fn forward(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, NetError> {
        let n = expect_cols(s, PRIV_DIM, "critic state")?;
        expect_cols(z, self.latent_dim, "critic latent")?;
        let x = Tensor::concat(&[s, z], 1)?;
        Ok(self.mlp.forward(&x)?.scale(self.output_scale).reshape(&[n])?)
    }
}

impl Module for ValueNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        prefixed("mlp", self.mlp.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed("mlp", self.mlp.params_mut()).collect()
    }
}
