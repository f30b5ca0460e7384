use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, io_err, scene_for, Agent, EpisodeStats, MetricsRow, Optimizers, RunFiles, TimingRow, TrainConfig, TrainError, TrainReport};
use crate::env::{curriculum_next, EnvConfig, NavEnv};
use crate::gsplat::Scene;

/// Losses and counters of one epoch, filled in by the algorithm.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpochStats {
    pub step_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub cenet_loss: f64,
    pub grad_norm: f64,
    pub steps: u64,
    pub update_ms: f64,
}

/// State shared by every trainer: curriculum, schedules, logging, evaluation and
/// checkpoints.
pub(crate) struct Session<'a> {
    pub cfg: &'a TrainConfig,
    pub env: &'a mut NavEnv,
    pub agent: &'a mut Agent,
    pub opt: Optimizers,
    pub rng: ChaCha8Rng,
    pub stats: EpisodeStats,
    scenes: Vec<Scene>,
    files: Option<RunFiles>,
    metrics: Vec<MetricsRow>,
    timing: Vec<TimingRow>,
    best: Agent,
    best_score: f64,
    steps: u64,
    anchor: usize,
    scene_idx: usize,
    transition: bool,
    event: String,
    snapshot: (Agent, Optimizers),
    started: Instant,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a TrainConfig, env: &'a mut NavEnv, agent: &'a mut Agent, scenes: &[Scene], out: Option<&std::path::Path>) -> Result<Self, TrainError> {
        cfg.validate()?;
        if env.n_envs() != cfg.n_envs {
            return Err(TrainError::Config(format!("environment has {} drones but n_envs = {}", env.n_envs(), cfg.n_envs)));
        }
        if env.cfg.episode_length != cfg.episode_length {
            return Err(TrainError::Config(format!("environment episode length {} differs from {}", env.cfg.episode_length, cfg.episode_length)));
        }
        let scenes = if scenes.is_empty() { vec![env.scene().clone()] } else { scenes.to_vec() };
        if let Some(c) = &cfg.curriculum {
            if scenes.len() != c.n_scenes {
                return Err(TrainError::Config(format!("curriculum expects {} scenes, got {}", c.n_scenes, scenes.len())));
            }
        }
        env.reseed(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
        env.set_scene(scenes[0].clone())?;
        let files = out.map(RunFiles::create).transpose()?;
        let opt = Optimizers::new(cfg);
        Ok(Self {
            stats: EpisodeStats::new(cfg.n_envs),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
            snapshot: (agent.clone(), opt.clone()),
            best: agent.clone(),
            best_score: f64::NEG_INFINITY,
            opt,
            scenes,
            files,
            metrics: Vec::new(),
            timing: Vec::new(),
            steps: 0,
            anchor: 0,
            scene_idx: 0,
            transition: false,
            event: String::new(),
            started: Instant::now(),
            cfg,
            env,
            agent,
        })
    }

    /// Applies the curriculum and learning-rate schedule for `epoch`.
    pub fn begin_epoch(&mut self, epoch: usize) -> Result<(), TrainError> {
        self.started = Instant::now();
        self.transition = false;
        self.event.clear();
        self.env.take_timing();
        if let Some(c) = &self.cfg.curriculum {
            let (idx, reset) = curriculum_next(c, epoch)?;
            if idx != self.scene_idx {
                self.env.set_scene(scene_for(&self.scenes, idx)?.clone())?;
                self.stats.reset();
                self.scene_idx = idx;
            }
            if epoch.is_multiple_of(c.epochs_per_pass) {
                self.transition = true;
            }
            if reset {
                self.opt.reset_lr();
                self.anchor = epoch;
            }
        }
        self.opt.set_schedule(self.cfg, epoch, self.anchor);
        Ok(())
    }

    /// Restores the last good state after a non-finite loss and halves the actor rate.
    pub fn recover(&mut self) -> Result<(), TrainError> {
        let (agent, opt) = self.snapshot.clone();
        *self.agent = agent;
        self.opt = opt;
        self.opt.actor.initial_lr *= 0.5;
        self.opt.actor.lr *= 0.5;
        self.env.reset_all()?;
        self.stats.reset();
        self.event = format!("non-finite loss: restored, actor lr halved to {:e}", self.opt.actor.lr);
        Ok(())
    }

    pub fn eval_env_config(&self) -> EnvConfig {
        EnvConfig { n_envs: self.cfg.eval_episodes, ..self.env.cfg.clone() }
    }

    /// Logs the epoch, evaluates when due and keeps the best agent.
    pub fn end_epoch(&mut self, epoch: usize, s: EpochStats) -> Result<(), TrainError> {
        self.steps += s.steps;
        let rollout = self.env.take_timing();
        let (reward_mean, reward_std) = self.stats.mean_std();
        let last = epoch + 1 == self.cfg.epochs;
        let due = self.cfg.eval_interval > 0 && ((epoch + 1).is_multiple_of(self.cfg.eval_interval) || last);
        let t_eval = Instant::now();
        let (eval_reward, eval_success) = if due {
            let scene = self.scenes[self.scene_idx].clone();
            let r = evaluate(self.agent, &self.eval_env_config(), &scene, &self.env.weights, self.cfg.eval_episodes, self.cfg.eval_seed)?;
            (Some(r.mean_reward), Some(r.successes))
        } else {
            (None, None)
        };
        let eval_ms = t_eval.elapsed().as_secs_f64() * 1e3;

        let score = if self.cfg.eval_interval > 0 { eval_reward } else { reward_mean };
        let finite = s.actor_loss.is_finite() && s.grad_norm.is_finite();
        if finite {
            self.snapshot = (self.agent.clone(), self.opt.clone());
        }
        let improved = matches!(score, Some(v) if v > self.best_score);
        if let Some(v) = score.filter(|_| improved) {
            self.best_score = v;
            self.best = self.agent.clone();
        }
        let row = MetricsRow {
            epoch,
            steps: self.steps,
            scene: self.scene_idx,
            transition: u8::from(self.transition),
            actor_lr: self.opt.actor.lr,
            reward_mean,
            reward_std,
            episodes: self.stats.completed,
            step_reward: s.step_reward,
            actor_loss: s.actor_loss,
            critic_loss: s.critic_loss,
            cenet_loss: s.cenet_loss,
            grad_norm: s.grad_norm,
            eval_reward,
            eval_success,
            window_bytes: super::window_footprint_bytes(self.cfg.n_envs, self.cfg.horizon, 3 * self.env.cfg.camera.width * self.env.cfg.camera.height),
            event: self.event.clone(),
        };
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let timing = TimingRow {
            epoch,
            wall_ms: ms(self.started.elapsed()),
            dynamics_ms: ms(rollout.dynamics),
            render_ms: ms(rollout.render),
            collision_ms: ms(rollout.collision),
            update_ms: s.update_ms,
            eval_ms,
        };
        if let Some(f) = &mut self.files {
            f.log(&row, &timing)?;
            if improved {
                let path = f.dir.join("best.ckpt");
                self.agent.to_checkpoint(&self.opt.named()).write(&path)?;
            }
            if due || last {
                let path = f.dir.join("last.ckpt");
                self.agent.to_checkpoint(&self.opt.named()).write(&path)?;
            }
        }
        self.metrics.push(row);
        self.timing.push(timing);
        Ok(())
    }

    pub fn finish(self) -> Result<TrainReport, TrainError> {
        if let Some(f) = &self.files {
            let last = f.dir.join("last.ckpt");
            if !last.exists() {
                self.agent.to_checkpoint(&self.opt.named()).write(&last)?;
            }
            let best = f.dir.join("best.ckpt");
            if !best.exists() {
                std::fs::copy(&last, &best).map_err(io_err(&best))?;
            }
        }
        let best = if self.best_score.is_finite() { self.best } else { self.agent.clone() };
        Ok(TrainReport { metrics: self.metrics, timing: self.timing, best, best_score: self.best_score, steps: self.steps })
    }

    /// Runs `epoch_fn` for every epoch with recovery from non-finite losses.
    pub fn run(mut self, mut epoch_fn: impl FnMut(&mut Session<'_>) -> Result<EpochStats, TrainError>) -> Result<TrainReport, TrainError> {
        for epoch in 0..self.cfg.epochs {
            self.begin_epoch(epoch)?;
            let stats = match epoch_fn(&mut self) {
                Ok(s) => s,
                Err(TrainError::NonFinite(_)) => {
                    self.recover()?;
                    EpochStats { steps: (self.cfg.n_envs * self.cfg.horizon) as u64, actor_loss: f64::NAN, grad_norm: f64::NAN, ..Default::default() }
                }
                Err(e) => return Err(e),
            };
            self.end_epoch(epoch, stats)?;
        }
        self.finish()
    }
}
