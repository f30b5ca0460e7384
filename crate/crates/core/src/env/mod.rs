//! Batched navigation environment: differentiable dynamics, splat rendering,
//! rewards, observations and resets for `n` drones flying in one scene.

mod curriculum;
mod trace;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tensor};
use crate::dynamics::{self, quat_from_euler, sample_params, ControlBatch, DelayState, DroneParams, DynamicsError, ParamBatch, RandomizationRanges, StateBatch};
use crate::gsplat::{nearest_obstacle_any, render, Camera, DepthImage, Pose, Scene};
use crate::nets::{ACTION_DIM, HISTORY, OBS_DIM, PRIV_DIM};
use crate::reward::{compute_reward, ActionWindow, RewardBreakdown, RewardWeights, TerminationFlags};

pub use curriculum::{curriculum_next, CurriculumSchedule};
pub use trace::{read_trace, write_trace, TraceMeta, TraceRow};

/// Depth prior grid: rows × columns.
pub const PRIOR_ROWS: usize = 6;
pub const PRIOR_COLS: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("actions must be [{expected}, 4], got {got:?}")]
    ActionShape { expected: usize, got: Vec<usize> },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Tensor(#[from] DiffError),
    #[error("epoch {epoch} is outside a {total}-epoch schedule")]
    Epoch { epoch: usize, total: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_envs: usize,
    pub dt: f64,
    pub episode_length: usize,
    pub camera: Camera,
    pub drone: DroneParams,
    pub randomization: RandomizationRanges,
    /// Center of the spawn cube, m.
    pub init_center: [f64; 3],
    /// Side length of the spawn cube, m.
    pub init_side: f64,
    /// Roll, pitch and yaw are drawn from `±init_attitude`, rad.
    pub init_attitude: f64,
    /// Body-rate command at full stick, rad/s.
    pub rate_max: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_envs: 16,
            dt: 0.05,
            episode_length: 600,
            camera: Camera::default(),
            drone: DroneParams::default(),
            randomization: RandomizationRanges::default(),
            init_center: [0.0, 0.0, 1.3],
            init_side: 1.0,
            init_attitude: 0.25,
            rate_max: 3.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.into()));
        if self.n_envs == 0 {
            return bad("n_envs must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.episode_length == 0 {
            return bad("episode_length must be at least 1");
        }
        if !(self.init_side >= 0.0) || !(self.init_attitude >= 0.0) || !(self.rate_max > 0.0) {
            return bad("init_side and init_attitude must be non-negative, rate_max positive");
        }
        self.camera.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        self.drone.validate()?;
        self.randomization.validate()?;
        Ok(())
    }
}

/// Wall-clock spent in each simulator stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTiming {
    pub dynamics: Duration,
    pub render: Duration,
    pub collision: Duration,
    pub steps: u64,
}

impl StepTiming {
    pub fn total(&self) -> Duration {
        self.dynamics + self.render + self.collision
    }

    pub fn merge(&mut self, other: &StepTiming) {
        self.dynamics += other.dynamics;
        self.render += other.render;
        self.collision += other.collision;
        self.steps += other.steps;
    }

    /// Shares of dynamics, rendering and collision checking in percent.
    pub fn percentages(&self) -> [f64; 3] {
        let t = self.total().as_secs_f64();
        if t == 0.0 {
            return [0.0; 3];
        }
        [self.dynamics, self.render, self.collision].map(|d| 100.0 * d.as_secs_f64() / t)
    }
}

/// What one environment step returns.
pub struct StepOutput {
    /// Observations after the step (and after any resets), `[n, 16]`, on the tape.
    pub obs: Tensor,
    /// Privileged observations after the step, `[n, 43]`.
    pub privileged: Tensor,
    /// Privileged observations of the state actually reached by this step, before any
    /// reset; the bootstrap input for drones that finished.
    pub terminal_privileged: Tensor,
    /// Weighted reward, `[n]`, on the tape.
    pub reward: Tensor,
    pub breakdown: Vec<RewardBreakdown>,
    pub termination: Vec<TerminationFlags>,
    /// Episode over: early termination or the step limit.
    pub done: Vec<bool>,
    /// Episode over because of early termination (not the step limit).
    pub early: Vec<bool>,
    /// Observation history `[n, 80]` of the state reached by this step, before resets.
    pub terminal_history: Tensor,
    /// Camera image of the state reached by this step, kept only for drones that finished.
    pub terminal_images: Vec<Option<Vec<u8>>>,
    /// Nearest obstacle point in any direction, before resets, m.
    pub clearance: Vec<f64>,
}

/// `n` drones flying in one shared scene.
pub struct NavEnv {
    pub cfg: EnvConfig,
    pub weights: RewardWeights,
    scene: Scene,
    obstacles: Vec<[f64; 3]>,
    rng: ChaCha8Rng,
    params: ParamBatch,
    state: StateBatch,
    delay: DelayState,
    act1: Tensor,
    act2: Tensor,
    q0: Tensor,
    steps: Vec<usize>,
    history: Vec<Vec<[f64; OBS_DIM]>>,
    images: Vec<Vec<u8>>,
    priors: Vec<[f64; PRIOR_ROWS * PRIOR_COLS]>,
    timing: StepTiming,
}

impl NavEnv {
    pub fn new(cfg: EnvConfig, scene: Scene, weights: RewardWeights) -> Result<Self, EnvError> {
        cfg.validate()?;
        scene.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        weights.validate().map_err(EnvError::Config)?;
        let n = cfg.n_envs;
        let params = ParamBatch::new(vec![cfg.drone.clone(); n]);
        let delay = DelayState::hover(&params);
        let mut env = Self {
            obstacles: scene.obstacle_points(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            state: StateBatch::at_rest(&vec![cfg.init_center; n]),
            act1: Tensor::zeros(&[n, ACTION_DIM]),
            act2: Tensor::zeros(&[n, ACTION_DIM]),
            q0: Tensor::new([1.0, 0.0, 0.0, 0.0].repeat(n), &[n, 4]),
            steps: vec![0; n],
            history: vec![Vec::new(); n],
            images: vec![Vec::new(); n],
            priors: vec![[0.0; PRIOR_ROWS * PRIOR_COLS]; n],
            timing: StepTiming::default(),
            params,
            delay,
            scene,
            weights,
            cfg,
        };
        env.reset_all()?;
        Ok(env)
    }

    pub fn n_envs(&self) -> usize {
        self.cfg.n_envs
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &StateBatch {
        &self.state
    }

    pub fn params(&self) -> &ParamBatch {
        &self.params
    }

    pub fn step_counts(&self) -> &[usize] {
        &self.steps
    }

    /// Latest camera images, 8-bit interleaved RGB, one per drone.
    pub fn images(&self) -> &[Vec<u8>] {
        &self.images
    }

    pub fn depth_priors(&self) -> &[[f64; PRIOR_ROWS * PRIOR_COLS]] {
        &self.priors
    }

    /// Last five observations per drone, oldest first, flattened to `[n, 80]`.
    pub fn history(&self) -> Tensor {
        let n = self.n_envs();
        let data = self.history.iter().flat_map(|h| h.iter().flatten().copied()).collect();
        Tensor::new(data, &[n, HISTORY * OBS_DIM])
    }

    /// Swaps the scene and resets every drone.
    pub fn set_scene(&mut self, scene: Scene) -> Result<(), EnvError> {
        scene.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        self.obstacles = scene.obstacle_points();
        self.scene = scene;
        self.reset_all()
    }

    /// Re-seeds the environment's random stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn take_timing(&mut self) -> StepTiming {
        std::mem::take(&mut self.timing)
    }

    /// Normalized action that holds hover for drone `i`.
    pub fn hover_action(&self, i: usize) -> [f64; ACTION_DIM] {
        [0.0, 0.0, 0.0, 2.0 * self.params.params[i].hover_thrust() - 1.0]
    }

    /// Cuts the computation graph: later gradients stop at the current state.
    pub fn detach(&mut self) {
        self.state = self.state.detach();
        self.delay = self.delay.detach();
        self.act1 = self.act1.detach();
        self.act2 = self.act2.detach();
    }

    pub fn reset_all(&mut self) -> Result<(), EnvError> {
        let all: Vec<usize> = (0..self.n_envs()).collect();
        self.reset(&all)
    }

    /// Re-spawns the listed drones with fresh initial states and airframes.
    pub fn reset(&mut self, indices: &[usize]) -> Result<(), EnvError> {
        if indices.is_empty() {
            return Ok(());
        }
        let n = self.n_envs();
        let mut params = self.params.params.clone();
        let mut p = vec![[0.0; 3]; n];
        let mut q = vec![[1.0, 0.0, 0.0, 0.0]; n];
        let mut mask = vec![0.0; n];
        let fresh = sample_params(&self.cfg.randomization, &self.cfg.drone, &mut self.rng, indices.len());
        for (&i, fp) in indices.iter().zip(fresh) {
            let mut pos = self.cfg.init_center;
            for c in pos.iter_mut() {
                *c += self.cfg.init_side * (self.rng.random::<f64>() - 0.5);
            }
            let a = self.cfg.init_attitude;
            let mut ang = || if a > 0.0 { self.rng.random_range(-a..=a) } else { 0.0 };
            let (r, pi, y) = (ang(), ang(), ang());
            p[i] = pos;
            q[i] = quat_from_euler(r, pi, y);
            params[i] = fp;
            mask[i] = 1.0;
        }
        self.params = ParamBatch::new(params);
        let hover_delay = DelayState::hover(&self.params);
        let fresh_state = StateBatch::from_rows(&p, &q, &vec![[0.0; 3]; n], &vec![[0.0; 3]; n]);
        let hover_act = Tensor::new((0..n).flat_map(|i| self.hover_action(i)).collect(), &[n, ACTION_DIM]);
        let keep = Tensor::new(mask.iter().map(|m| 1.0 - m).collect(), &[n, 1]);
        let take = Tensor::new(mask.clone(), &[n, 1]);
        let blend = |old: &Tensor, new: &Tensor| -> Result<Tensor, DiffError> { old.mul(&keep)?.add(&new.mul(&take)?) };
        self.state = StateBatch {
            p: blend(&self.state.p, &fresh_state.p)?,
            q: blend(&self.state.q, &fresh_state.q)?,
            v: blend(&self.state.v, &fresh_state.v)?,
            w: blend(&self.state.w, &fresh_state.w)?,
            a: blend(&self.state.a, &fresh_state.a)?,
        };
        self.delay = DelayState {
            rate_cmd: blend(&self.delay.rate_cmd, &hover_delay.rate_cmd)?,
            thrust_cmd: blend(&self.delay.thrust_cmd, &hover_delay.thrust_cmd)?,
            wdot_prev: blend(&self.delay.wdot_prev, &hover_delay.wdot_prev)?,
        };
        self.act1 = blend(&self.act1, &hover_act)?;
        self.act2 = blend(&self.act2, &hover_act)?;
        let q0 = self.q0.to_vec().chunks(4).enumerate().flat_map(|(i, r)| if mask[i] > 0.0 { q[i].to_vec() } else { r.to_vec() }).collect();
        self.q0 = Tensor::new(q0, &[n, 4]);

        self.render_envs(indices);
        let obs = self.observation()?;
        for &i in indices {
            self.steps[i] = 0;
            let row: [f64; OBS_DIM] = obs.row(i).try_into().expect("observation row");
            self.history[i] = vec![row; HISTORY];
        }
        Ok(())
    }

    fn render_envs(&mut self, indices: &[usize]) {
        let t0 = Instant::now();
        for &i in indices {
            let pose = Pose::new(self.state.position(i), self.state.attitude(i));
            let frame = render(&self.scene, &pose, &self.cfg.camera);
            self.images[i] = frame.rgb.to_u8();
            self.priors[i] = depth_prior(&frame.depth);
        }
        self.timing.render += t0.elapsed();
    }

    /// `[h, q, v, a_t, a_{t-1}]` per drone, `[n, 16]`, on the tape.
    pub fn observation(&self) -> Result<Tensor, DiffError> {
        let h = self.state.p.narrow(1, 2, 1)?;
        Tensor::concat(&[&h, &self.state.q, &self.state.v, &self.act1, &self.act2], 1)
    }

    /// Observation plus position and the pooled depth prior, `[n, 43]`.
    pub fn privileged(&self) -> Result<Tensor, DiffError> {
        self.privileged_from(&self.observation()?)
    }

    fn privileged_from(&self, obs: &Tensor) -> Result<Tensor, DiffError> {
        let n = self.n_envs();
        let prior = Tensor::new(self.priors.iter().flatten().copied().collect(), &[n, PRIOR_ROWS * PRIOR_COLS]);
        let out = Tensor::concat(&[obs, &self.state.p, &prior], 1)?;
        debug_assert_eq!(out.shape()[1], PRIV_DIM);
        Ok(out)
    }

    /// Advances every drone with normalized actions `[n, 4]` in `[-1, 1]`.
    ///
    /// Drones whose episode ends are re-spawned before returning; their terminal
    /// observation is kept in [`StepOutput::terminal_privileged`].
    pub fn step(&mut self, actions: &Tensor) -> Result<StepOutput, EnvError> {
        let n = self.n_envs();
        if actions.shape() != [n, ACTION_DIM] {
            return Err(EnvError::ActionShape { expected: n, got: actions.shape().to_vec() });
        }
        // Rows with non-finite actions fly the hover command and end with a fault.
        let faulty: Vec<bool> = actions.data().chunks(ACTION_DIM).map(|r| r.iter().any(|v| !v.is_finite())).collect();
        let actions = if faulty.iter().any(|f| *f) {
            let data = (0..n).flat_map(|i| if faulty[i] { self.hover_action(i).to_vec() } else { actions.row(i).to_vec() }).collect();
            Tensor::new(data, &[n, ACTION_DIM])
        } else {
            actions.clone()
        };

        let t0 = Instant::now();
        let a = actions.clamp(-1.0, 1.0);
        let control = ControlBatch { rates: a.narrow(1, 0, 3)?.scale(self.cfg.rate_max), thrust: a.narrow(1, 3, 1)?.add_scalar(1.0).scale(0.5) };
        let (state, delay) = dynamics::step(&self.state, &control, &self.params, &self.delay, self.cfg.dt)?;
        self.state = state;
        self.delay = delay;
        self.timing.dynamics += t0.elapsed();

        let all: Vec<usize> = (0..n).collect();
        self.render_envs(&all);

        let t1 = Instant::now();
        let window = ActionWindow { current: &actions, prev: &self.act1, prev2: &self.act2 };
        let reward = compute_reward(&self.state, &window, &self.q0, &self.scene, &self.obstacles, &self.cfg.camera, &self.weights)?;
        let clearance: Vec<f64> = (0..n)
            .map(|i| nearest_obstacle_any(&self.obstacles, self.state.position(i)).map_or(f64::INFINITY, |(_, d)| d))
            .collect();
        self.timing.collision += t1.elapsed();
        self.timing.steps += 1;

        self.act2 = std::mem::replace(&mut self.act1, actions);
        let mut termination = reward.termination;
        let mut early = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        for i in 0..n {
            termination[i].fault |= faulty[i];
            self.steps[i] += 1;
            let e = termination[i].any();
            early.push(e);
            done.push(e || self.steps[i] >= self.cfg.episode_length);
        }

        let obs = self.observation()?;
        let terminal_privileged = self.privileged_from(&obs)?;
        for i in 0..n {
            let row: [f64; OBS_DIM] = obs.row(i).try_into().expect("observation row");
            self.history[i].remove(0);
            self.history[i].push(row);
        }
        let terminal_history = self.history();
        let terminal_images = (0..n).map(|i| done[i].then(|| self.images[i].clone())).collect();
        let finished: Vec<usize> = (0..n).filter(|&i| done[i]).collect();
        let (obs, privileged) = if finished.is_empty() {
            (obs, terminal_privileged.clone())
        } else {
            self.reset(&finished)?;
            let obs = self.observation()?;
            let privileged = self.privileged_from(&obs)?;
            (obs, privileged)
        };
        Ok(StepOutput {
            obs,
            privileged,
            terminal_privileged,
            reward: reward.total,
            breakdown: reward.breakdown,
            termination,
            done,
            early,
            terminal_history,
            terminal_images,
            clearance,
        })
    }
}

/// Average-pools a depth image onto a 6×4 grid (row-major). Edge pixels are
/// replicated when the image does not divide evenly.
pub fn depth_prior(depth: &DepthImage) -> [f64; PRIOR_ROWS * PRIOR_COLS] {
    let (w, h) = (depth.width, depth.height);
    let cell_w = w.div_ceil(PRIOR_COLS);
    let cell_h = h.div_ceil(PRIOR_ROWS);
    let mut out = [0.0; PRIOR_ROWS * PRIOR_COLS];
    for r in 0..PRIOR_ROWS {
        for c in 0..PRIOR_COLS {
            let mut sum = 0.0;
            for y in r * cell_h..(r + 1) * cell_h {
                for x in c * cell_w..(c + 1) * cell_w {
                    sum += depth.at(y.min(h - 1), x.min(w - 1));
                }
            }
            out[r * PRIOR_COLS + c] = sum / (cell_w * cell_h) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests;
