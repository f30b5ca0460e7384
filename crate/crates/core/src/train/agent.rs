use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{no_grad, DiffError, Tensor};
use crate::nets::{
    Adam, CENet, Checkpoint, EncoderSpec, MlpSpec, Module, NetError, PolicyNet, RunningMeanStd, ValueNet, VisualEncoder, EMBED_DIM, HISTORY, LATENT_DIM,
    OBS_DIM, PRIV_DIM,
};

/// Network sizes and initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub policy: MlpSpec,
    pub critic: MlpSpec,
    pub cenet: MlpSpec,
    pub encoder: EncoderSpec,
    /// KL weight of the context estimator.
    pub beta: f64,
    pub init_log_std: f64,
    /// Multiplier on the raw critic output.
    pub value_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            policy: MlpSpec::default(),
            critic: MlpSpec::default(),
            cenet: MlpSpec::default(),
            encoder: EncoderSpec::default(),
            beta: 0.1,
            init_log_std: -1.0,
            value_scale: 50.0,
        }
    }
}

impl AgentConfig {
    /// Narrower networks for single-CPU runs: three hidden layers of 128, 64 and 32.
    pub fn desk() -> Self {
        let small = MlpSpec::new(&[128, 64, 32]);
        Self {
            policy: small.clone(),
            critic: small.clone(),
            cenet: small,
            encoder: EncoderSpec { hidden: 128, ..EncoderSpec::default() },
            ..Self::default()
        }
    }
}

/// Everything that is learned: networks plus input normalizers.
#[derive(Clone, Debug)]
pub struct Agent {
    pub policy: PolicyNet,
    pub critic: ValueNet,
    pub cenet: CENet,
    pub encoder: VisualEncoder,
    pub obs_norm: RunningMeanStd,
    pub priv_norm: RunningMeanStd,
}

/// Per-step network inputs derived from the environment.
pub struct Inputs {
    /// Normalized observation, on the tape.
    pub obs: Tensor,
    /// CENet posterior mean, constant.
    pub z: Tensor,
    /// Visual embedding, a leaf so the actor gradient with respect to it can be read back.
    pub e: Tensor,
}

impl Agent {
    pub fn new(cfg: &AgentConfig, rate_max: f64, hover_thrust: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            policy: PolicyNet::new(&cfg.policy, LATENT_DIM, EMBED_DIM, rate_max, hover_thrust, cfg.init_log_std, &mut rng),
            critic: ValueNet::new(&cfg.critic, LATENT_DIM, cfg.value_scale, &mut rng),
            cenet: CENet::new(&cfg.cenet, EMBED_DIM, cfg.beta, &mut rng),
            encoder: VisualEncoder::new(&cfg.encoder, &mut rng),
            obs_norm: RunningMeanStd::new(OBS_DIM),
            priv_norm: RunningMeanStd::new(PRIV_DIM),
        }
    }

    /// Standardizes every 16-wide slot of a `[n, 80]` history.
    pub fn normalize_history(&self, history: &Tensor) -> Result<Tensor, DiffError> {
        let n = history.shape()[0];
        self.obs_norm.normalize(&history.reshape(&[n * HISTORY, OBS_DIM])?)?.reshape(&[n, HISTORY * OBS_DIM])
    }

    /// Embeddings of 8-bit RGB images without recording a graph.
    pub fn embed(&self, images: &[&[u8]]) -> Result<Tensor, NetError> {
        no_grad(|| {
            let x = self.encoder.images_to_tensor(images)?;
            self.encoder.forward(&x)
        })
    }

    /// Latent mean for a raw history `[n, 80]` and embeddings, detached.
    pub fn latent(&self, history: &Tensor, e: &Tensor) -> Result<Tensor, NetError> {
        no_grad(|| {
            let (mu, _) = self.cenet.encode(&self.normalize_history(history)?, e)?;
            Ok(mu)
        })
    }

    pub fn inputs(&self, obs: &Tensor, history: &Tensor, images: &[Vec<u8>]) -> Result<Inputs, NetError> {
        let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
        let e = self.embed(&refs)?;
        let z = self.latent(history, &e)?;
        let e = e.detach_leaf();
        Ok(Inputs { obs: self.obs_norm.normalize(obs)?, z, e })
    }

    /// Critic value of raw privileged observations.
    pub fn value(&self, privileged: &Tensor, z: &Tensor) -> Result<Tensor, NetError> {
        self.critic.forward(&self.priv_norm.normalize(privileged)?, z)
    }

    /// Writes networks, normalizers and optimizer states.
    pub fn to_checkpoint(&self, optimizers: &[(&str, &Adam)]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_module("policy", &self.policy);
        ck.add_module("critic", &self.critic);
        ck.add_module("cenet", &self.cenet);
        ck.add_module("encoder", &self.encoder);
        let n = self.obs_norm.to_vec();
        ck.push("obs_norm", &[n.len()], n);
        let p = self.priv_norm.to_vec();
        ck.push("priv_norm", &[p.len()], p);
        for (name, opt) in optimizers {
            ck.push(format!("opt.{name}.state"), &[3], vec![opt.lr, opt.initial_lr, opt.step_count as f64]);
            for (k, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ck.push(format!("opt.{name}.m{k}"), &[m.len()], m.clone());
                ck.push(format!("opt.{name}.v{k}"), &[v.len()], v.clone());
            }
        }
        ck
    }

    /// Loads networks and normalizers; shapes must match this agent.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), NetError> {
        let mut next = self.clone();
        ck.load_module("policy", &mut next.policy)?;
        ck.load_module("critic", &mut next.critic)?;
        ck.load_module("cenet", &mut next.cenet)?;
        ck.load_module("encoder", &mut next.encoder)?;
        for (name, norm) in [("obs_norm", &mut next.obs_norm), ("priv_norm", &mut next.priv_norm)] {
            let e = ck.get(name).ok_or_else(|| NetError::MissingParam(name.into()))?;
            if !norm.from_slice(&e.data) {
                return Err(NetError::ParamShape { name: name.into(), expected: vec![2 * norm.dim() + 1], found: e.shape.clone() });
            }
        }
        *self = next;
        Ok(())
    }

    pub fn modules(&self) -> [(&str, &dyn Module); 4] {
        [("policy", &self.policy), ("critic", &self.critic), ("cenet", &self.cenet), ("encoder", &self.encoder)]
    }
}

/// Restores optimizer moments written by [`Agent::to_checkpoint`].
pub fn load_optimizer(ck: &Checkpoint, name: &str, opt: &mut Adam) -> Result<(), NetError> {
    let state = ck.get(&format!("opt.{name}.state")).ok_or_else(|| NetError::MissingParam(format!("opt.{name}.state")))?;
    opt.lr = state.data[0];
    opt.initial_lr = state.data[1];
    opt.step_count = state.data[2] as u64;
    opt.m.clear();
    opt.v.clear();
    for k in 0.. {
        match (ck.get(&format!("opt.{name}.m{k}")), ck.get(&format!("opt.{name}.v{k}"))) {
            (Some(m), Some(v)) => {
                opt.m.push(m.data.clone());
                opt.v.push(v.data.clone());
            }
            _ => break,
        }
    }
    Ok(())
}
