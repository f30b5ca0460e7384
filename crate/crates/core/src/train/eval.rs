use crate::diffcore::{no_grad, Tensor};
use crate::dynamics::rotation_matrix3;
use crate::env::{EnvConfig, NavEnv, TraceRow};
use crate::gsplat::Scene;
use crate::nets::ACTION_DIM;
use crate::reward::RewardWeights;

use super::{Agent, TrainError};

/// A waypoint counts as reached once `‖p − w‖² ≤` this value.
pub const WAYPOINT_RADIUS_SQ: f64 = 0.3;
/// Minimum clearance to every obstacle point for a successful flight, m.
pub const SUCCESS_CLEARANCE: f64 = 0.2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DroneResult {
    pub success: bool,
    /// Sum of rewards over the episode.
    pub reward: f64,
    pub early: bool,
    pub steps: usize,
    /// Waypoints reached in order.
    pub waypoints_reached: usize,
    pub min_clearance: f64,
    /// Mean `|h − h_target|` over the episode, m.
    pub mean_height_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub successes: usize,
    pub n: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub drones: Vec<DroneResult>,
    /// Per-drone step traces (with latents when the controller provides them).
    pub traces: Vec<Vec<TraceRow>>,
}

impl EvalReport {
    pub fn mean_height_error(&self) -> f64 {
        self.drones.iter().map(|d| d.mean_height_error).sum::<f64>() / self.drones.len().max(1) as f64
    }
}

/// Maps the environment to normalized actions and, optionally, latents to trace.
pub type Controller<'a> = dyn FnMut(&NavEnv) -> Result<(Tensor, Option<Tensor>), TrainError> + 'a;

/// Flies `n` randomized drones for one episode each with the given controller.
///
/// A drone succeeds when it (i) is not terminated early, (ii) reaches every waypoint
/// in order and (iii) keeps at least [`SUCCESS_CLEARANCE`] from every obstacle point.
/// `controller` returns normalized actions `[n, 4]` and optionally latents to trace.
pub fn evaluate_with(
    env_cfg: &EnvConfig,
    scene: &Scene,
    weights: &RewardWeights,
    n: usize,
    seed: u64,
    controller: &mut Controller<'_>,
) -> Result<EvalReport, TrainError> {
    let cfg = EnvConfig { n_envs: n, seed, ..env_cfg.clone() };
    let mut env = NavEnv::new(cfg, scene.clone(), weights.clone())?;
    let mut drones = vec![DroneResult { min_clearance: f64::INFINITY, ..Default::default() }; n];
    let mut traces = vec![Vec::new(); n];
    let mut active = vec![true; n];
    let mut next_wp = vec![0usize; n];
    let mut height_err = vec![0.0; n];
    let wps = &scene.waypoints;
    let reach = |p: [f64; 3], w: [f64; 3]| (0..3).map(|k| (p[k] - w[k]).powi(2)).sum::<f64>() <= WAYPOINT_RADIUS_SQ;
    for i in 0..n {
        let p = env.state().position(i);
        if next_wp[i] < wps.len() && reach(p, wps[next_wp[i]]) {
            next_wp[i] += 1;
        }
    }

    for step in 0..env.cfg.episode_length {
        if !active.iter().any(|a| *a) {
            break;
        }
        let (actions, latents) = controller(&env)?;
        let actions = actions.detach();
        let out = env.step(&actions)?;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let st = out.terminal_privileged.row(i);
            let p = [st[16], st[17], st[18]];
            let d = &mut drones[i];
            d.reward += out.breakdown[i].total;
            d.steps += 1;
            d.min_clearance = d.min_clearance.min(out.clearance[i]);
            height_err[i] += (p[2] - weights.h_target).abs();
            if next_wp[i] < wps.len() && reach(p, wps[next_wp[i]]) {
                next_wp[i] += 1;
            }
            let mut row = TraceRow {
                step,
                p,
                q: st[1..5].try_into().expect("quaternion"),
                v: st[5..8].try_into().expect("velocity"),
                action: actions.row(i).try_into().expect("action"),
                done: out.done[i],
                early: out.early[i],
                latent: latents.as_ref().map_or_else(Vec::new, |z| z.row(i).to_vec()),
                ..Default::default()
            };
            row.set_reward(&out.breakdown[i]);
            traces[i].push(row);
            if out.done[i] {
                d.early = out.early[i];
                active[i] = false;
            }
        }
    }
    for i in 0..n {
        let d = &mut drones[i];
        d.waypoints_reached = next_wp[i];
        d.mean_height_error = height_err[i] / d.steps.max(1) as f64;
        d.success = !d.early && d.steps == env.cfg.episode_length && next_wp[i] == wps.len() && d.min_clearance >= SUCCESS_CLEARANCE;
    }
    let rewards: Vec<f64> = drones.iter().map(|d| d.reward).collect();
    let mean = rewards.iter().sum::<f64>() / n.max(1) as f64;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    Ok(EvalReport { successes: drones.iter().filter(|d| d.success).count(), n, mean_reward: mean, std_reward: std, drones, traces })
}

/// Evaluates the deterministic policy `tanh(μ)` with latent means.
pub fn evaluate(agent: &Agent, env_cfg: &EnvConfig, scene: &Scene, weights: &RewardWeights, n: usize, seed: u64) -> Result<EvalReport, TrainError> {
    let mut controller = |env: &NavEnv| -> Result<(Tensor, Option<Tensor>), TrainError> {
        no_grad(|| {
            let obs = env.observation()?;
            let inp = agent.inputs(&obs, &env.history(), env.images())?;
            let a = agent.policy.mean_action(&inp.obs, &inp.z, &inp.e)?;
            Ok((a, Some(inp.z)))
        })
    };
    evaluate_with(env_cfg, scene, weights, n, seed, &mut controller)
}

/// Scripted controller with full state access that follows the scene's reference
/// polyline at walking pace and hovers at its end. Used to check the evaluation
/// harness and as a performance ceiling.
pub fn reference_pilot(env: &NavEnv) -> Tensor {
    let n = env.n_envs();
    let path = &env.scene().reference_trajectory;
    let mut out = Vec::with_capacity(n * ACTION_DIM);
    for i in 0..n {
        let p = env.state().position(i);
        let v = env.state().velocity(i);
        let q = env.state().attitude(i);
        let prm = &env.params().params[i];
        let (carrot, tangent, remaining) = carrot_on_path(path, p, 0.6);
        let speed = 0.8f64.min(remaining);
        let mut acc = [0.0; 3];
        for k in 0..3 {
            acc[k] = 2.0 * (carrot[k] - p[k]) + 2.5 * (speed * tangent[k] - v[k]) - prm.gravity[k] + prm.drag * v[k] / prm.mass;
        }
        // limit tilt to 30 degrees
        let horiz = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
        let max_h = acc[2].max(1.0) * 30f64.to_radians().tan();
        if horiz > max_h {
            acc[0] *= max_h / horiz;
            acc[1] *= max_h / horiz;
        }
        let norm = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
        let b3d = acc.map(|a| a / norm);
        let r = rotation_matrix3(q).expect("unit attitude");
        let b3 = [r[0][2], r[1][2], r[2][2]];
        let thrust = prm.mass * (acc[0] * b3[0] + acc[1] * b3[1] + acc[2] * b3[2]) / prm.max_thrust;
        // rotation axis taking b3 onto b3d, expressed in the body frame
        let axis = [b3[1] * b3d[2] - b3[2] * b3d[1], b3[2] * b3d[0] - b3[0] * b3d[2], b3[0] * b3d[1] - b3[1] * b3d[0]];
        let body: Vec<f64> = (0..3).map(|k| r[0][k] * axis[0] + r[1][k] * axis[1] + r[2][k] * axis[2]).collect();
        let yaw = r[1][0].atan2(r[0][0]);
        let rates = [4.0 * body[0], 4.0 * body[1], -2.0 * yaw];
        out.extend(rates.iter().map(|w| (w / env.cfg.rate_max).clamp(-1.0, 1.0)));
        out.push((2.0 * thrust - 1.0).clamp(-1.0, 1.0));
    }
    Tensor::new(out, &[n, ACTION_DIM])
}

/// Point `lookahead` metres past the projection of `p` on the polyline, the path
/// direction there and the arc length left after that point.
fn carrot_on_path(path: &[[f64; 3]], p: [f64; 3], lookahead: f64) -> ([f64; 3], [f64; 3], f64) {
    let seg_len: Vec<f64> = path.windows(2).map(|w| dist(w[0], w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let (mut best, mut best_s) = (f64::INFINITY, 0.0);
    let mut start = 0.0;
    for (k, w) in path.windows(2).enumerate() {
        let l = seg_len[k];
        if l > 0.0 {
            let t = ((0..3).map(|j| (p[j] - w[0][j]) * (w[1][j] - w[0][j])).sum::<f64>() / (l * l)).clamp(0.0, 1.0);
            let proj = [0, 1, 2].map(|j| w[0][j] + t * (w[1][j] - w[0][j]));
            let d = dist(p, proj);
            if d < best {
                best = d;
                best_s = start + t * l;
            }
        }
        start += l;
    }
    let s = (best_s + lookahead).min(total);
    let mut acc = 0.0;
    for (k, w) in path.windows(2).enumerate() {
        let l = seg_len[k];
        if l > 0.0 && (s <= acc + l || k + 2 == path.len()) {
            let t = ((s - acc) / l).clamp(0.0, 1.0);
            let point = [0, 1, 2].map(|j| w[0][j] + t * (w[1][j] - w[0][j]));
            let dir = [0, 1, 2].map(|j| (w[1][j] - w[0][j]) / l);
            return (point, dir, total - s);
        }
        acc += l;
    }
    (path.last().copied().unwrap_or(p), [1.0, 0.0, 0.0], 0.0)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}
