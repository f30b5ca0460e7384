use rand::Rng;

use super::heads::OBS_DIM;
use super::{expect_cols, prefixed, Mlp, MlpSpec, Module, NetError};
use crate::diffcore::Tensor;

pub const LATENT_DIM: usize = 16;
/// Observation steps in the encoder's history window.
pub const HISTORY: usize = 5;

/// β-VAE context estimator: encodes the recent observation history plus the visual
/// embedding into a latent `z`, and decodes `z` into the next observation.
#[derive(Clone, Debug)]
pub struct CENet {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub beta: f64,
    embed_dim: usize,
}

/// Scalar loss and its parts for one batch.
pub struct CenetLoss {
    pub total: Tensor,
    pub recon: f64,
    pub kl: f64,
}

impl CENet {
    pub fn new(spec: &MlpSpec, embed_dim: usize, beta: f64, rng: &mut impl Rng) -> Self {
        let encoder = Mlp::new(HISTORY * OBS_DIM + embed_dim, spec, 2 * LATENT_DIM, false, rng);
        let rev = MlpSpec { widths: spec.widths.iter().rev().copied().collect() };
        let decoder = Mlp::new(LATENT_DIM, &rev, OBS_DIM, false, rng);
        Self { encoder, decoder, beta, embed_dim }
    }

    /// Posterior mean and log standard deviation, each `[n, 16]`.
    pub fn encode(&self, history: &Tensor, e: &Tensor) -> Result<(Tensor, Tensor), NetError> {
        expect_cols(history, HISTORY * OBS_DIM, "observation history")?;
        expect_cols(e, self.embed_dim, "cenet embedding")?;
        let out = self.encoder.forward(&Tensor::concat(&[history, e], 1)?)?;
        Ok((out.narrow(1, 0, LATENT_DIM)?, out.narrow(1, LATENT_DIM, LATENT_DIM)?))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, NetError> {
        expect_cols(z, LATENT_DIM, "latent")?;
        self.decoder.forward(z)
    }

    /// Reconstruction MSE plus `β·KL`, with `z = μ + σ·noise`.
    pub fn loss(&self, history: &Tensor, e: &Tensor, next_obs: &Tensor, noise: &Tensor) -> Result<CenetLoss, NetError> {
        expect_cols(next_obs, OBS_DIM, "next observation")?;
        let (mu, log_std) = self.encode(history, e)?;
        let z = mu.add(&log_std.exp().mul(noise)?)?;
        let recon = self.decode(&z)?.sub(next_obs)?.square().mean();
        let kl = kl_standard_normal(&mu, &log_std)?;
        let total = recon.add(&kl.scale(self.beta))?;
        Ok(CenetLoss { recon: recon.item(), kl: kl.item(), total })
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I))` summed over latent dimensions, averaged over the batch.
pub fn kl_standard_normal(mu: &Tensor, log_std: &Tensor) -> Result<Tensor, NetError> {
    let n = mu.shape()[0].max(1) as f64;
    let per = mu.square().add(&log_std.scale(2.0).exp())?.sub(&log_std.scale(2.0))?.add_scalar(-1.0);
    Ok(per.sum().scale(0.5 / n))
}

impl Module for CENet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        prefixed("encoder", self.encoder.params()).chain(prefixed("decoder", self.decoder.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed("encoder", self.encoder.params_mut()).chain(prefixed("decoder", self.decoder.params_mut())).collect()
    }
}
