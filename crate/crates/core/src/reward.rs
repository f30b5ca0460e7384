//! Stepwise navigation reward and early-termination rules.
//!
//! [`compute_reward`] builds the weighted total on the autodiff tape so policy
//! gradients can flow through it. Discrete choices (which waypoint is next, which
//! obstacle point is nearest, which reference segment applies) are made on plain
//! values and enter the tape as constants.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Tensor};
use crate::dynamics::StateBatch;
use crate::gsplat::{nearest_obstacle, Camera, Pose, Scene};

/// Norms below this count as zero when normalizing velocities and headings.
const UNIT_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub survival: f64,
    pub linear_velocity: f64,
    pub pose: f64,
    pub height: f64,
    pub action: f64,
    pub action_rate: f64,
    pub smoothness: f64,
    pub yaw_alignment: f64,
    pub waypoint: f64,
    pub obstacle: f64,
    pub out_of_map: f64,
    pub ref_tracking: f64,
    /// Obstacles closer than this contribute to the obstacle term, m.
    pub d_threshold: f64,
    /// Target hover height, m.
    pub h_target: f64,
    pub ceiling: f64,
    pub v_limit: f64,
    /// Overshoot beyond the scene bounds that ends an episode, m.
    pub oob_limit: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            survival: 8.0,
            linear_velocity: -0.5,
            pose: -0.5,
            height: -2.0,
            action: -1.0,
            action_rate: -1.0,
            smoothness: -1.0,
            yaw_alignment: 0.25,
            waypoint: 2.0,
            obstacle: 1.0,
            out_of_map: -2.0,
            ref_tracking: -2.0,
            d_threshold: 0.5,
            h_target: 1.3,
            ceiling: 3.0,
            v_limit: 20.0,
            oob_limit: 3.0,
        }
    }
}

impl RewardWeights {
    /// Weights in [`RewardBreakdown::NAMES`] order.
    pub fn as_array(&self) -> [f64; 12] {
        [
            self.survival,
            self.linear_velocity,
            self.pose,
            self.height,
            self.action,
            self.action_rate,
            self.smoothness,
            self.yaw_alignment,
            self.waypoint,
            self.obstacle,
            self.out_of_map,
            self.ref_tracking,
        ]
    }

    /// Copy with every navigation term switched off, leaving stabilization only.
    pub fn hover_only(&self) -> Self {
        Self { yaw_alignment: 0.0, waypoint: 0.0, obstacle: 0.0, out_of_map: 0.0, ref_tracking: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = self.as_array().into_iter().chain([self.d_threshold, self.h_target, self.ceiling, self.v_limit, self.oob_limit]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("reward weights must be finite".into());
        }
        if self.d_threshold < 0.0 || self.v_limit <= 0.0 || self.oob_limit < 0.0 {
            return Err("d_threshold and oob_limit must be non-negative, v_limit positive".into());
        }
        Ok(())
    }
}

/// Unweighted reward components of one drone for one step, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardBreakdown {
    pub survival: f64,
    pub linear_velocity: f64,
    pub pose: f64,
    pub height: f64,
    pub action: f64,
    pub action_rate: f64,
    pub smoothness: f64,
    pub yaw_alignment: f64,
    pub waypoint: f64,
    pub obstacle: f64,
    pub out_of_map: f64,
    pub ref_tracking: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const NAMES: [&'static str; 12] = [
        "survival",
        "linear_velocity",
        "pose",
        "height",
        "action",
        "action_rate",
        "smoothness",
        "yaw_alignment",
        "waypoint",
        "obstacle",
        "out_of_map",
        "ref_tracking",
    ];

    pub fn components(&self) -> [f64; 12] {
        [
            self.survival,
            self.linear_velocity,
            self.pose,
            self.height,
            self.action,
            self.action_rate,
            self.smoothness,
            self.yaw_alignment,
            self.waypoint,
            self.obstacle,
            self.out_of_map,
            self.ref_tracking,
        ]
    }

    fn from_components(c: [f64; 12], total: f64) -> Self {
        Self {
            survival: c[0],
            linear_velocity: c[1],
            pose: c[2],
            height: c[3],
            action: c[4],
            action_rate: c[5],
            smoothness: c[6],
            yaw_alignment: c[7],
            waypoint: c[8],
            obstacle: c[9],
            out_of_map: c[10],
            ref_tracking: c[11],
            total,
        }
    }

    pub fn weighted_sum(&self, w: &RewardWeights) -> f64 {
        self.components().iter().zip(w.as_array()).map(|(c, w)| c * w).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TerminationFlags {
    pub ceiling_exceeded: bool,
    pub speed_exceeded: bool,
    pub out_of_bounds: bool,
    /// Non-finite action or state.
    pub fault: bool,
}

impl TerminationFlags {
    pub fn any(&self) -> bool {
        self.ceiling_exceeded || self.speed_exceeded || self.out_of_bounds || self.fault
    }
}

/// Positive overshoot of `v` beyond `[lo, hi]`.
fn overshoot(v: f64, lo: f64, hi: f64) -> f64 {
    (v - hi).max(0.0) + (lo - v).max(0.0)
}

/// Early-termination flags for a drone at position `p` with velocity `v`.
pub fn check_termination(p: [f64; 3], v: [f64; 3], scene: &Scene, w: &RewardWeights) -> TerminationFlags {
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let b = &scene.bounds;
    let finite = p.iter().chain(&v).all(|x| x.is_finite());
    TerminationFlags {
        ceiling_exceeded: p[2] > w.ceiling,
        speed_exceeded: speed > w.v_limit,
        out_of_bounds: overshoot(p[0], b.min[0], b.max[0]) >= w.oob_limit || overshoot(p[1], b.min[1], b.max[1]) >= w.oob_limit,
        fault: !finite,
    }
}

/// Unit tangent of the polyline segment nearest to `p`; the earlier segment wins ties.
/// Degenerate segments are skipped; with none left the result is `+x`.
pub fn nearest_reference_direction(p: [f64; 3], trajectory: &[[f64; 3]]) -> [f64; 3] {
    let mut best = (f64::INFINITY, [1.0, 0.0, 0.0]);
    for seg in trajectory.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if len2 == 0.0 {
            continue;
        }
        let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
        let t = ((ap[0] * d[0] + ap[1] * d[1] + ap[2] * d[2]) / len2).clamp(0.0, 1.0);
        let dist2: f64 = (0..3).map(|i| (ap[i] - t * d[i]).powi(2)).sum();
        if dist2 < best.0 {
            let len = len2.sqrt();
            best = (dist2, [d[0] / len, d[1] / len, d[2] / len]);
        }
    }
    best.1
}

/// Closest waypoint among those not behind `p` in x. A waypoint at exactly the
/// drone's x still counts, so sitting on it earns the full bonus.
pub fn next_waypoint(p: [f64; 3], waypoints: &[[f64; 3]]) -> Option<[f64; 3]> {
    let d2 = |w: &[f64; 3]| (0..3).map(|i| (w[i] - p[i]).powi(2)).sum::<f64>();
    waypoints.iter().filter(|w| w[0] >= p[0]).min_by(|a, b| d2(a).total_cmp(&d2(b))).copied()
}

/// Actions of the current and the two previous steps, each `[n, 4]`.
#[derive(Clone, Debug)]
pub struct ActionWindow<'a> {
    pub current: &'a Tensor,
    pub prev: &'a Tensor,
    pub prev2: &'a Tensor,
}

/// Per-drone reward: the differentiable total plus plain-value breakdowns.
#[derive(Clone, Debug)]
pub struct Reward {
    /// Weighted total, `[n]`.
    pub total: Tensor,
    pub breakdown: Vec<RewardBreakdown>,
    pub termination: Vec<TerminationFlags>,
}

/// Evaluates every reward term for a batch of drones sharing one scene.
///
/// `q0` holds each drone's initial attitude `[n, 4]`; `obstacles` are the scene's
/// obstacle points. Survival is 1 unless the new state triggers early termination.
pub fn compute_reward(
    state: &StateBatch,
    actions: &ActionWindow<'_>,
    q0: &Tensor,
    scene: &Scene,
    obstacles: &[[f64; 3]],
    cam: &Camera,
    w: &RewardWeights,
) -> Result<Reward, DiffError> {
    let n = state.len();
    let col = |vals: Vec<f64>| Tensor::new(vals, &[n, 1]);
    let sq_norm = |t: &Tensor| t.square().sum_axis(1, true);
    let c = |t: &Tensor, i: usize| t.narrow(1, i, 1);

    let mut termination = Vec::with_capacity(n);
    let mut survival = Vec::with_capacity(n);
    let mut sign = Vec::with_capacity(n);
    let mut v_mask = Vec::with_capacity(n);
    let mut vxy_mask = Vec::with_capacity(n);
    let mut wp_target = Vec::with_capacity(3 * n);
    let mut wp_mask = Vec::with_capacity(n);
    let mut obs_point = Vec::with_capacity(3 * n);
    let mut obs_mask = Vec::with_capacity(n);
    let mut v_des = Vec::with_capacity(3 * n);
    for i in 0..n {
        let p = state.position(i);
        let v = state.velocity(i);
        let q = state.attitude(i);
        let flags = check_termination(p, v, scene, w);
        survival.push(if flags.any() { 0.0 } else { 1.0 });
        termination.push(flags);
        let q0i = q0.row(i);
        sign.push(if (0..4).map(|k| q[k] * q0i[k]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 });
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v_mask.push(if speed >= UNIT_EPS { 1.0 } else { 0.0 });
        vxy_mask.push(if (v[0] * v[0] + v[1] * v[1]).sqrt() >= UNIT_EPS { 1.0 } else { 0.0 });
        match next_waypoint(p, &scene.waypoints) {
            Some(wp) => {
                wp_target.extend(wp);
                wp_mask.push(1.0);
            }
            None => {
                wp_target.extend(p);
                wp_mask.push(0.0);
            }
        }
        match nearest_obstacle(obstacles, &Pose::new(p, q), cam) {
            Some((pt, d)) if d < w.d_threshold => {
                obs_point.extend(pt);
                obs_mask.push(1.0);
            }
            _ => {
                obs_point.extend([p[0] + 1.0, p[1], p[2]]);
                obs_mask.push(0.0);
            }
        }
        v_des.extend(nearest_reference_direction(p, &scene.reference_trajectory));
    }
    let v_mask = col(v_mask);
    let vxy_mask = col(vxy_mask);

    // Unit vectors that are exactly zero (with zero gradient) when the norm vanishes.
    let guarded_unit = |t: &Tensor, mask: &Tensor| -> Result<Tensor, DiffError> {
        let inv_mask = mask.neg().add_scalar(1.0);
        let norm = sq_norm(t)?.add(&inv_mask)?.sqrt();
        t.div(&norm)?.mul(mask)
    };

    let r_survival = col(survival);
    let r_lin_vel = sq_norm(&state.v)?;
    let aligned_q = state.q.mul(&col(sign))?;
    let r_pose = sq_norm(&aligned_q.sub(q0)?)?.sqrt();
    let r_height = c(&state.p, 2)?.add_scalar(-w.h_target).square();
    let r_action = sq_norm(actions.current)?;
    let r_rate = sq_norm(&actions.current.sub(actions.prev)?)?;
    let r_smooth = sq_norm(&actions.current.sub(&actions.prev.scale(2.0))?.add(actions.prev2)?)?;

    let vxy = state.v.narrow(1, 0, 2)?;
    let vxy_unit = guarded_unit(&vxy, &vxy_mask)?;
    // Body x axis in world coordinates, projected to the horizontal plane.
    let (qw, qx, qy, qz) = (c(&state.q, 0)?, c(&state.q, 1)?, c(&state.q, 2)?, c(&state.q, 3)?);
    let hx = qy.square().add(&qz.square())?.scale(-2.0).add_scalar(1.0);
    let hy = qx.mul(&qy)?.add(&qw.mul(&qz)?)?.scale(2.0);
    let heading = Tensor::concat(&[&hx, &hy], 1)?;
    let heading_mask = col(heading.data().chunks(2).map(|h| if h[0].hypot(h[1]) >= UNIT_EPS { 1.0 } else { 0.0 }).collect());
    let heading_unit = guarded_unit(&heading, &heading_mask)?;
    let r_yaw = vxy_unit.mul(&heading_unit)?.sum_axis(1, true)?;

    let wp = Tensor::new(wp_target, &[n, 3]);
    let r_wp = sq_norm(&state.p.sub(&wp)?)?.neg().exp().mul(&col(wp_mask))?;

    let obs = Tensor::new(obs_point, &[n, 3]);
    let r_obs = sq_norm(&state.p.sub(&obs)?)?.sqrt().mul(&col(obs_mask))?;

    let b = &scene.bounds;
    let axis_overshoot = |k: usize| -> Result<Tensor, DiffError> {
        let x = c(&state.p, k)?;
        Ok(x.add_scalar(-b.max[k]).relu().add(&x.neg().add_scalar(b.min[k]).relu())?.square())
    };
    let r_oob = axis_overshoot(0)?.add(&axis_overshoot(1)?)?;

    let v_unit = guarded_unit(&state.v, &v_mask)?;
    let r_ref = sq_norm(&v_unit.sub(&Tensor::new(v_des, &[n, 3]))?)?.sqrt().mul(&v_mask)?;

    let terms = [r_survival, r_lin_vel, r_pose, r_height, r_action, r_rate, r_smooth, r_yaw, r_wp, r_obs, r_oob, r_ref];
    let weights = w.as_array();
    let mut total = terms[0].scale(weights[0]);
    for (t, wt) in terms.iter().zip(weights).skip(1) {
        total = total.add(&t.scale(wt))?;
    }
    let breakdown = (0..n)
        .map(|i| {
            let comps: [f64; 12] = std::array::from_fn(|k| terms[k].data()[i]);
            RewardBreakdown::from_components(comps, total.data()[i])
        })
        .collect();
    Ok(Reward { total: total.reshape(&[n])?, breakdown, termination })
}
