//! Batched, differentiable quadrotor rigid-body model.
//!
//! Inputs are desired body rates and a normalized collective thrust. An inner PD loop
//! turns the (delayed) rate command into torque, Euler's equation gives angular
//! acceleration, and the attitude quaternion is integrated and renormalized. World
//! acceleration is thrust along the body z axis, gravity and linear drag.
//! Everything runs on [`Tensor`]s so gradients flow from later states back to earlier
//! states and controls.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tensor};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("zero quaternion has no rotation")]
    ZeroQuaternion,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Tensor(#[from] DiffError),
}

/// Physical parameters of one airframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroneParams {
    pub mass: f64,
    /// Diagonal inertia (Ix, Iy, Iz), kg·m².
    pub inertia: [f64; 3],
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    pub max_thrust: f64,
    /// Motor (thrust) delay factor in (0, 1]; 1 means no delay.
    pub motor_delay: f64,
    /// Body-rate command delay factor in (0, 1]; 1 means no delay.
    pub rate_delay: f64,
    pub drag: f64,
    pub gravity: [f64; 3],
}

impl Default for DroneParams {
    fn default() -> Self {
        Self {
            mass: 1.25,
            inertia: [0.1, 0.1, 0.2],
            kp: [1.0, 1.0, 2.0],
            kd: [0.01, 0.01, 0.02],
            max_thrust: 26.0,
            motor_delay: 0.65,
            rate_delay: 0.65,
            drag: 0.5,
            gravity: [0.0, 0.0, -GRAVITY],
        }
    }
}

impl DroneParams {
    /// Normalized thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * -self.gravity[2] / self.max_thrust
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidParam(m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|i| !(*i > 0.0)) {
            return bad("inertia entries must be positive");
        }
        if !(self.max_thrust > 0.0) {
            return bad("max_thrust must be positive");
        }
        for (name, k) in [("motor_delay", self.motor_delay), ("rate_delay", self.rate_delay)] {
            if !(k > 0.0 && k <= 1.0) {
                return bad(&format!("{name} must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        self.low + (self.high - self.low) * u
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

/// Per-episode sampling ranges for the physical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub mass: Interval,
    pub max_thrust: Interval,
    pub inertia_xy: Interval,
    pub inertia_z: Interval,
    pub motor_delay: Interval,
    pub rate_delay: Interval,
    pub drag: Interval,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            mass: Interval::new(1.0, 1.5),
            max_thrust: Interval::new(22.0, 30.0),
            inertia_xy: Interval::new(0.075, 0.125),
            inertia_z: Interval::new(0.15, 0.25),
            motor_delay: Interval::new(0.5, 0.8),
            rate_delay: Interval::new(0.5, 0.8),
            drag: Interval::new(0.4, 0.6),
        }
    }
}

impl RandomizationRanges {
    /// Every interval collapsed onto the matching value of `p`.
    pub fn fixed(p: &DroneParams) -> Self {
        let pt = |v| Interval::new(v, v);
        Self {
            mass: pt(p.mass),
            max_thrust: pt(p.max_thrust),
            inertia_xy: pt(p.inertia[0]),
            inertia_z: pt(p.inertia[2]),
            motor_delay: pt(p.motor_delay),
            rate_delay: pt(p.rate_delay),
            drag: pt(p.drag),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, iv) in self.named() {
            if !(iv.low <= iv.high) {
                return Err(DynamicsError::InvalidParam(format!("{name}: low {} > high {}", iv.low, iv.high)));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, Interval); 7] {
        [
            ("mass", self.mass),
            ("max_thrust", self.max_thrust),
            ("inertia_xy", self.inertia_xy),
            ("inertia_z", self.inertia_z),
            ("motor_delay", self.motor_delay),
            ("rate_delay", self.rate_delay),
            ("drag", self.drag),
        ]
    }
}

/// Draws `n` parameter sets; gains and gravity are copied from `base`.
pub fn sample_params(ranges: &RandomizationRanges, base: &DroneParams, rng: &mut impl Rng, n: usize) -> Vec<DroneParams> {
    (0..n)
        .map(|_| {
            let ixy = ranges.inertia_xy.sample(rng);
            DroneParams {
                mass: ranges.mass.sample(rng),
                max_thrust: ranges.max_thrust.sample(rng),
                inertia: [ixy, ixy, ranges.inertia_z.sample(rng)],
                motor_delay: ranges.motor_delay.sample(rng),
                rate_delay: ranges.rate_delay.sample(rng),
                drag: ranges.drag.sample(rng),
                ..base.clone()
            }
        })
        .collect()
}

/// Parameters of a batch laid out as constant tensors, one row per drone.
#[derive(Clone, Debug)]
pub struct ParamBatch {
    pub params: Vec<DroneParams>,
    mass: Tensor,
    inertia: Tensor,
    kp: Tensor,
    kd: Tensor,
    max_thrust: Tensor,
    motor_delay: Tensor,
    rate_delay: Tensor,
    drag: Tensor,
    gravity: Tensor,
}

impl ParamBatch {
    pub fn new(params: Vec<DroneParams>) -> Self {
        let n = params.len();
        let col = |f: &dyn Fn(&DroneParams) -> f64| Tensor::new(params.iter().map(f).collect(), &[n, 1]);
        let vec3 = |f: &dyn Fn(&DroneParams) -> [f64; 3]| Tensor::new(params.iter().flat_map(f).collect(), &[n, 3]);
        Self {
            mass: col(&|p| p.mass),
            inertia: vec3(&|p| p.inertia),
            kp: vec3(&|p| p.kp),
            kd: vec3(&|p| p.kd),
            max_thrust: col(&|p| p.max_thrust),
            motor_delay: col(&|p| p.motor_delay),
            rate_delay: col(&|p| p.rate_delay),
            drag: col(&|p| p.drag),
            gravity: vec3(&|p| p.gravity),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Batched drone state: position, attitude (scalar-first), world velocity,
/// body rates and world acceleration. 16 numbers per drone.
#[derive(Clone, Debug)]
pub struct StateBatch {
    pub p: Tensor,
    pub q: Tensor,
    pub v: Tensor,
    pub w: Tensor,
    pub a: Tensor,
}

impl StateBatch {
    pub const DIM: usize = 16;

    pub fn from_rows(p: &[[f64; 3]], q: &[[f64; 4]], v: &[[f64; 3]], w: &[[f64; 3]]) -> Self {
        let n = p.len();
        Self {
            p: Tensor::new(p.concat(), &[n, 3]),
            q: Tensor::new(q.concat(), &[n, 4]),
            v: Tensor::new(v.concat(), &[n, 3]),
            w: Tensor::new(w.concat(), &[n, 3]),
            a: Tensor::zeros(&[n, 3]),
        }
    }

    /// Drones at rest at `positions` with identity attitude.
    pub fn at_rest(positions: &[[f64; 3]]) -> Self {
        let n = positions.len();
        Self::from_rows(positions, &vec![[1.0, 0.0, 0.0, 0.0]; n], &vec![[0.0; 3]; n], &vec![[0.0; 3]; n])
    }

    pub fn len(&self) -> usize {
        self.p.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[n, 16]` view (p, q, v, w, a).
    pub fn flat(&self) -> Result<Tensor, DiffError> {
        Tensor::concat(&[&self.p, &self.q, &self.v, &self.w, &self.a], 1)
    }

    pub fn detach(&self) -> Self {
        Self { p: self.p.detach(), q: self.q.detach(), v: self.v.detach(), w: self.w.detach(), a: self.a.detach() }
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        row3(&self.p, i)
    }

    pub fn velocity(&self, i: usize) -> [f64; 3] {
        row3(&self.v, i)
    }

    pub fn attitude(&self, i: usize) -> [f64; 4] {
        let r = self.q.row(i);
        [r[0], r[1], r[2], r[3]]
    }

    pub fn is_finite(&self) -> bool {
        [&self.p, &self.q, &self.v, &self.w, &self.a].iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn row3(t: &Tensor, i: usize) -> [f64; 3] {
    let r = t.row(i);
    [r[0], r[1], r[2]]
}

/// Filter states of the delay model plus the previous angular acceleration.
#[derive(Clone, Debug)]
pub struct DelayState {
    /// Effective (filtered) body-rate command, `[n, 3]`.
    pub rate_cmd: Tensor,
    /// Effective (filtered) normalized thrust, `[n, 1]`.
    pub thrust_cmd: Tensor,
    /// Angular acceleration from the previous step, `[n, 3]`.
    pub wdot_prev: Tensor,
}

impl DelayState {
    /// Registers primed for hover: zero rates, hover thrust.
    pub fn hover(params: &ParamBatch) -> Self {
        let n = params.len();
        Self {
            rate_cmd: Tensor::zeros(&[n, 3]),
            thrust_cmd: Tensor::new(params.params.iter().map(DroneParams::hover_thrust).collect(), &[n, 1]),
            wdot_prev: Tensor::zeros(&[n, 3]),
        }
    }

    pub fn detach(&self) -> Self {
        Self { rate_cmd: self.rate_cmd.detach(), thrust_cmd: self.thrust_cmd.detach(), wdot_prev: self.wdot_prev.detach() }
    }
}

/// Desired body rates `[n, 3]` (rad/s) and normalized thrust `[n, 1]`.
#[derive(Clone, Debug)]
pub struct ControlBatch {
    pub rates: Tensor,
    pub thrust: Tensor,
}

/// Row-wise cross product of two `[n, 3]` tensors.
pub fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let c = |t: &Tensor, i| t.narrow(1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    let x = a1.mul(&b2)?.sub(&a2.mul(&b1)?)?;
    let y = a2.mul(&b0)?.sub(&a0.mul(&b2)?)?;
    let z = a0.mul(&b1)?.sub(&a1.mul(&b0)?)?;
    Tensor::concat(&[&x, &y, &z], 1)
}

/// Rows scaled to unit L2 norm.
pub fn normalize_rows(t: &Tensor) -> Result<Tensor, DiffError> {
    t.div(&t.square().sum_axis(1, true)?.sqrt())
}

/// Rotation matrices `[n, 3, 3]` of unit quaternions `[n, 4]`.
pub fn rotation_matrix(q: &Tensor) -> Result<Tensor, DynamicsError> {
    let n = q.shape()[0];
    if q.data().chunks(4).any(|r| r.iter().all(|v| *v == 0.0)) {
        return Err(DynamicsError::ZeroQuaternion);
    }
    let c = |i| q.narrow(1, i, 1);
    let (w, x, y, z) = (c(0)?, c(1)?, c(2)?, c(3)?);
    let two = |a: &Tensor, b: &Tensor| -> Result<Tensor, DiffError> { Ok(a.mul(b)?.scale(2.0)) };
    let one_minus = |a: Tensor, b: Tensor| -> Result<Tensor, DiffError> { Ok(a.add(&b)?.scale(-2.0).add_scalar(1.0)) };
    let r00 = one_minus(y.square(), z.square())?;
    let r01 = two(&x, &y)?.sub(&two(&w, &z)?)?;
    let r02 = two(&x, &z)?.add(&two(&w, &y)?)?;
    let r10 = two(&x, &y)?.add(&two(&w, &z)?)?;
    let r11 = one_minus(x.square(), z.square())?;
    let r12 = two(&y, &z)?.sub(&two(&w, &x)?)?;
    let r20 = two(&x, &z)?.sub(&two(&w, &y)?)?;
    let r21 = two(&y, &z)?.add(&two(&w, &x)?)?;
    let r22 = one_minus(x.square(), y.square())?;
    Ok(Tensor::concat(&[&r00, &r01, &r02, &r10, &r11, &r12, &r20, &r21, &r22], 1)?.reshape(&[n, 3, 3])?)
}

/// Rotation matrix of a single unit quaternion.
pub fn rotation_matrix3(q: [f64; 4]) -> Result<[[f64; 3]; 3], DynamicsError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(DynamicsError::ZeroQuaternion);
    }
    let [w, x, y, z] = q;
    Ok([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Quaternion for roll/pitch/yaw (Z-Y-X convention), scalar-first.
pub fn quat_from_euler(roll: f64, pitch: f64, yaw: f64) -> [f64; 4] {
    let (sr, cr) = (roll * 0.5).sin_cos();
    let (sp, cp) = (pitch * 0.5).sin_cos();
    let (sy, cy) = (yaw * 0.5).sin_cos();
    [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]
}

fn check_finite(t: &Tensor, what: &'static str) -> Result<(), DynamicsError> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::NonFinite(what))
    }
}

/// Advances every drone by `dt` seconds.
///
/// Order of updates: delay filters, PD torque, Euler's rotation equation,
/// semi-implicit Euler on body rates, quaternion integration with the new rates,
/// world acceleration with drag, semi-implicit Euler on velocity then position.
pub fn step(
    state: &StateBatch,
    control: &ControlBatch,
    params: &ParamBatch,
    delay: &DelayState,
    dt: f64,
) -> Result<(StateBatch, DelayState), DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveDt(dt));
    }
    check_finite(&control.rates, "body-rate command")?;
    check_finite(&control.thrust, "thrust command")?;
    for (t, what) in [(&state.p, "position"), (&state.q, "attitude"), (&state.v, "velocity"), (&state.w, "body rates")] {
        check_finite(t, what)?;
    }

    // (1) first-order delay filters
    let thrust = control.thrust.clamp(0.0, 1.0);
    let rate_cmd = delay.rate_cmd.add(&control.rates.sub(&delay.rate_cmd)?.mul(&params.rate_delay)?)?;
    let thrust_cmd = delay.thrust_cmd.add(&thrust.sub(&delay.thrust_cmd)?.mul(&params.motor_delay)?)?;

    // (2)-(3) PD torque and angular acceleration
    let torque = params.kp.mul(&rate_cmd.sub(&state.w)?)?.sub(&params.kd.mul(&delay.wdot_prev)?)?;
    let gyro = cross(&state.w, &params.inertia.mul(&state.w)?)?;
    let wdot = torque.sub(&gyro)?.div(&params.inertia)?;

    // (4) body rates
    let w = state.w.add(&wdot.scale(dt))?;

    // (5) attitude
    let n = state.len();
    let w_quat = Tensor::concat(&[&Tensor::zeros(&[n, 1]), &w], 1)?;
    let q_dot = state.q.quat_mul(&w_quat)?;
    let q = normalize_rows(&state.q.add(&q_dot.scale(0.5 * dt))?)?;

    // (6) world acceleration: body z axis times thrust, gravity, linear drag
    let c = |i| q.narrow(1, i, 1);
    let (qw, qx, qy, qz) = (c(0)?, c(1)?, c(2)?, c(3)?);
    let zx = qx.mul(&qz)?.add(&qw.mul(&qy)?)?.scale(2.0);
    let zy = qy.mul(&qz)?.sub(&qw.mul(&qx)?)?.scale(2.0);
    let zz = qx.square().add(&qy.square())?.scale(-2.0).add_scalar(1.0);
    let body_z = Tensor::concat(&[&zx, &zy, &zz], 1)?;
    let thrust_acc = thrust_cmd.mul(&params.max_thrust)?.div(&params.mass)?;
    let drag_acc = state.v.mul(&params.drag)?.div(&params.mass)?;
    let a = body_z.mul(&thrust_acc)?.add(&params.gravity)?.sub(&drag_acc)?;

    // (7) velocity then position
    let v = state.v.add(&a.scale(dt))?;
    let p = state.p.add(&v.scale(dt))?;

    Ok((StateBatch { p, q, v, w, a }, DelayState { rate_cmd, thrust_cmd, wdot_prev: wdot }))
}
