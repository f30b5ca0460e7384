//! Trainers (short-horizon actor-critic, full-episode BPTT, PPO), the evaluation
//! protocol and latent-space analysis.

mod agent;
mod eval;
mod latents;
mod losses;
mod ppo;
mod session;
mod shac;

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tensor};
use crate::env::{CurriculumSchedule, EnvError};
use crate::gsplat::Scene;
use crate::nets::{Adam, NetError, ACTION_DIM, EMBED_DIM, LATENT_DIM, OBS_DIM, PRIV_DIM};

pub use agent::{load_optimizer, Agent, AgentConfig, Inputs};
pub use eval::{evaluate, evaluate_with, reference_pilot, DroneResult, EvalReport, SUCCESS_CLEARANCE, WAYPOINT_RADIUS_SQ};
pub use latents::{analyze_latents, pca2, stage_of, write_latent_csv, LatentAnalysis, Pca, Stage};
pub use losses::{clipped_surrogate, gae, policy_loss, td_lambda_targets, value_loss, ActorLoss, StepRecord};
pub use shac::{train_bptt, train_grad_nav};
pub use ppo::train_ppo;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] DiffError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Analysis(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[value(name = "gradnav")]
    GradNav,
    Bptt,
    Ppo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::GradNav => "gradnav",
            Algo::Bptt => "bptt",
            Algo::Ppo => "ppo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algo: Algo,
    pub n_envs: usize,
    pub episode_length: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub cenet_lr: f64,
    /// λ of the TD(λ) targets and of GAE.
    pub lambda: f64,
    pub horizon: usize,
    /// Passes over each window when fitting the critic.
    pub critic_updates: usize,
    pub critic_minibatches: usize,
    pub ppo_clip: f64,
    pub ppo_entropy: f64,
    pub ppo_epochs: usize,
    pub ppo_minibatches: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Linear learning-rate decay to 10% over each curriculum pass (or the whole run).
    pub lr_decay: bool,
    /// At most this many window images feed each encoder update; 0 uses all.
    pub encoder_batch: usize,
    /// Evaluate every this many epochs (0 disables periodic evaluation).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub curriculum: Option<CurriculumSchedule>,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::GradNav,
            n_envs: 128,
            episode_length: 600,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            cenet_lr: 5e-4,
            lambda: 0.95,
            horizon: 32,
            critic_updates: 16,
            critic_minibatches: 4,
            ppo_clip: 0.1,
            ppo_entropy: 1e-3,
            ppo_epochs: 5,
            ppo_minibatches: 4,
            epochs: 600,
            seed: 0,
            grad_clip: 1.0,
            lr_decay: true,
            encoder_batch: 0,
            eval_interval: 0,
            eval_episodes: 10,
            eval_seed: 1000,
            curriculum: None,
            agent: AgentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for one algorithm (full-episode BPTT uses 32 drones and `h = 600`).
    pub fn for_algo(algo: Algo) -> Self {
        match algo {
            Algo::Bptt => Self { algo, n_envs: 32, horizon: 600, ..Self::default() },
            _ => Self { algo, ..Self::default() },
        }
    }

    /// Single-CPU settings: 16 drones, narrower networks, a higher learning rate,
    /// evaluation every 50 epochs and 256 window images per encoder update.
    pub fn desk(algo: Algo) -> Self {
        let base = Self::for_algo(algo);
        Self {
            n_envs: 16,
            actor_lr: 2e-3,
            critic_lr: 2e-3,
            eval_interval: 50,
            encoder_batch: 256,
            agent: AgentConfig::desk(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.n_envs == 0 || self.epochs == 0 || self.horizon == 0 || self.episode_length == 0 {
            return bad("n_envs, epochs, horizon and episode_length must be at least 1".into());
        }
        if self.horizon > self.episode_length {
            return bad(format!("horizon {} exceeds episode_length {}", self.horizon, self.episode_length));
        }
        if self.algo == Algo::Bptt && self.horizon != self.episode_length {
            return bad(format!("bptt needs horizon == episode_length, got {} and {}", self.horizon, self.episode_length));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]".into());
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("cenet_lr", self.cenet_lr), ("grad_clip", self.grad_clip)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.critic_minibatches == 0 || self.ppo_minibatches == 0 || self.ppo_epochs == 0 {
            return bad("minibatch and epoch counts must be at least 1".into());
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return bad(format!("ppo_clip must lie in (0, 1), got {}", self.ppo_clip));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1 when evaluating".into());
        }
        if let Some(c) = &self.curriculum {
            if c.n_scenes == 0 || c.passes == 0 || c.epochs_per_pass == 0 {
                return bad("curriculum counts must be at least 1".into());
            }
            if c.total_epochs() != self.epochs {
                return bad(format!("curriculum covers {} epochs but epochs = {}", c.total_epochs(), self.epochs));
            }
        }
        Ok(())
    }

    /// Learning rate at `epoch` given the epoch of the last reset.
    pub fn lr_at(&self, initial: f64, epoch: usize, anchor: usize) -> f64 {
        if !self.lr_decay {
            return initial;
        }
        let span = self.curriculum.as_ref().map_or(self.epochs, |c| c.epochs_per_pass).max(1);
        let frac = ((epoch - anchor) as f64 / span as f64).min(1.0);
        initial * (1.0 - 0.9 * frac)
    }
}

/// Bytes held per window for `n` drones over `h` steps: per-step inputs, actions,
/// rewards and flags plus the 64×64 RGB frame of every step.
pub fn window_footprint_bytes(n: usize, h: usize, image_bytes: usize) -> usize {
    let floats = OBS_DIM + PRIV_DIM + LATENT_DIM + EMBED_DIM + 2 * ACTION_DIM + 2;
    n * h * (floats * 8 + image_bytes + 2)
}

/// One line of `metrics.csv`. Contains nothing time-dependent, so identical seeds give
/// identical files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Environment steps consumed so far.
    pub steps: u64,
    pub scene: usize,
    /// 1 on epochs where the curriculum switched scenes.
    pub transition: u8,
    pub actor_lr: f64,
    /// Mean return of the most recent completed episodes (up to one per drone).
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub episodes: usize,
    /// Mean per-step reward of this epoch's window.
    pub step_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub cenet_loss: f64,
    pub grad_norm: f64,
    pub eval_reward: Option<f64>,
    pub eval_success: Option<usize>,
    pub window_bytes: usize,
    pub event: String,
}

/// One line of `timing.csv`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub epoch: usize,
    pub wall_ms: f64,
    pub dynamics_ms: f64,
    pub render_ms: f64,
    pub collision_ms: f64,
    pub update_ms: f64,
    pub eval_ms: f64,
}

/// Summary returned by every trainer.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    pub timing: Vec<TimingRow>,
    /// Agent with the best score (evaluation reward when evaluating, else training return).
    pub best: Agent,
    pub best_score: f64,
    pub steps: u64,
}

impl TrainReport {
    pub fn transitions(&self) -> usize {
        self.metrics.iter().filter(|m| m.transition == 1).count()
    }
}

/// Output files of one run.
pub struct RunFiles {
    pub dir: PathBuf,
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
}

impl RunFiles {
    pub fn create(dir: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
        let timing = csv::Writer::from_path(dir.join("timing.csv"))?;
        Ok(Self { dir: dir.to_path_buf(), metrics, timing })
    }

    pub fn log(&mut self, m: &MetricsRow, t: &TimingRow) -> Result<(), TrainError> {
        self.metrics.serialize(m)?;
        self.metrics.flush().map_err(io_err(&self.dir))?;
        self.timing.serialize(t)?;
        self.timing.flush().map_err(io_err(&self.dir))?;
        Ok(())
    }
}

/// Standard normal samples `[rows, cols]`.
pub(crate) fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new((0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(), &[rows, cols])
}

/// Rolling window of completed episode returns.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpisodeStats {
    pub running: Vec<f64>,
    pub recent: Vec<f64>,
    pub completed: usize,
    keep: usize,
}

impl EpisodeStats {
    pub fn new(n: usize) -> Self {
        Self { running: vec![0.0; n], recent: Vec::new(), completed: 0, keep: n }
    }

    pub fn record(&mut self, rewards: &[f64], done: &[bool]) {
        for i in 0..rewards.len() {
            self.running[i] += rewards[i];
            if done[i] {
                self.recent.push(self.running[i]);
                self.running[i] = 0.0;
                self.completed += 1;
            }
        }
        if self.recent.len() > self.keep {
            self.recent.drain(..self.recent.len() - self.keep);
        }
    }

    pub fn mean_std(&self) -> (Option<f64>, Option<f64>) {
        if self.recent.is_empty() {
            return (None, None);
        }
        let n = self.recent.len() as f64;
        let m = self.recent.iter().sum::<f64>() / n;
        let v = self.recent.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (Some(m), Some(v.sqrt()))
    }

    pub fn reset(&mut self) {
        self.running.iter_mut().for_each(|r| *r = 0.0);
    }
}

/// Per-group optimizers of a trainer.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
    pub cenet: Adam,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            actor: Adam::new(cfg.actor_lr).with_clip(cfg.grad_clip),
            critic: Adam::new(cfg.critic_lr).with_clip(cfg.grad_clip),
            cenet: Adam::new(cfg.cenet_lr).with_clip(cfg.grad_clip),
        }
    }

    pub fn named(&self) -> [(&str, &Adam); 3] {
        [("actor", &self.actor), ("critic", &self.critic), ("cenet", &self.cenet)]
    }

    pub fn reset_lr(&mut self) {
        self.actor.reset_lr();
        self.critic.reset_lr();
        self.cenet.reset_lr();
    }

    pub fn set_schedule(&mut self, cfg: &TrainConfig, epoch: usize, anchor: usize) {
        self.actor.lr = cfg.lr_at(self.actor.initial_lr, epoch, anchor);
        self.critic.lr = cfg.lr_at(self.critic.initial_lr, epoch, anchor);
        self.cenet.lr = cfg.lr_at(self.cenet.initial_lr, epoch, anchor);
    }
}

/// Scenes in training order: the curriculum list, or the single training scene.
pub(crate) fn scene_for(scenes: &[Scene], idx: usize) -> Result<&Scene, TrainError> {
    scenes.get(idx).ok_or_else(|| TrainError::Config(format!("curriculum needs scene {idx} but only {} given", scenes.len())))
}

#[cfg(test)]
mod tests;
