use crate::diffcore::{DiffError, Tensor};
use crate::nets::{NetError, ValueNet};

/// Builds the short-horizon actor loss one step at a time.
///
/// Every drone accumulates its discounted reward on the tape. When its episode ends
/// inside the window the return is closed (bootstrapped with the terminal value if
/// the episode was cut by the step limit, with zero after an early termination) and
/// the discount restarts at 1 for the next episode. [`ActorLoss::finish`] closes the
/// remaining returns with the value of the last state and averages over `n·h`.
pub struct ActorLoss {
    gamma: f64,
    n: usize,
    steps: usize,
    discount: Vec<f64>,
    /// Rows whose episode is still running, i.e. not finished on the latest step.
    open: Vec<bool>,
    acc: Tensor,
    loss: Tensor,
}

impl ActorLoss {
    pub fn new(n: usize, gamma: f64) -> Self {
        Self { gamma, n, steps: 0, discount: vec![1.0; n], open: vec![true; n], acc: Tensor::zeros(&[n]), loss: Tensor::scalar(0.0) }
    }

    fn column(&self, v: Vec<f64>) -> Tensor {
        Tensor::new(v, &[self.n])
    }

    /// Adds the rewards `[n]` of one step. `terminal_values` (`[n]`, used only on rows
    /// that finished without early termination) may be `None` when no such row exists.
    pub fn push(&mut self, reward: &Tensor, done: &[bool], early: &[bool], terminal_values: Option<&Tensor>) -> Result<(), DiffError> {
        self.steps += 1;
        self.acc = self.acc.add(&reward.mul(&self.column(self.discount.clone()))?)?;
        for d in self.discount.iter_mut() {
            *d *= self.gamma;
        }
        for (o, &d) in self.open.iter_mut().zip(done) {
            *o = !d;
        }
        if !done.iter().any(|d| *d) {
            return Ok(());
        }
        let mask = self.column(done.iter().map(|&d| f64::from(u8::from(d))).collect());
        let mut closed = self.acc.mul(&mask)?;
        if let Some(v) = terminal_values {
            let w = (0..self.n).map(|i| if done[i] && !early[i] { self.discount[i] } else { 0.0 }).collect();
            closed = closed.add(&v.mul(&self.column(w))?)?;
        }
        self.loss = self.loss.sub(&closed.sum())?;
        let keep = self.column(done.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect());
        self.acc = self.acc.mul(&keep)?;
        for (d, &fin) in self.discount.iter_mut().zip(done) {
            if fin {
                *d = 1.0;
            }
        }
        Ok(())
    }

    /// Closes every open return with `final_values` `[n]` (or zero without a critic)
    /// and returns the mean loss. Rows that finished on the last step are already closed.
    pub fn finish(self, final_values: Option<&Tensor>) -> Result<Tensor, DiffError> {
        let mut open = self.acc.clone();
        if let Some(v) = final_values {
            let w = (0..self.n).map(|i| if self.open[i] { self.discount[i] } else { 0.0 }).collect();
            open = open.add(&v.mul(&self.column(w))?)?;
        }
        let total = self.loss.sub(&open.sum())?;
        Ok(total.scale(1.0 / (self.n * self.steps.max(1)) as f64))
    }
}

/// One recorded step of a window, as plain values.
#[derive(Clone, Debug, Default)]
pub struct StepRecord {
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub early: Vec<bool>,
    /// Value of the state reached by the step: the terminal state for finished drones
    /// (zero after early termination) and the next state otherwise.
    pub next_value: Vec<f64>,
}

/// Actor loss for a whole window of per-step rewards, each `[n]`; a convenience wrapper
/// over [`ActorLoss`].
pub fn policy_loss(
    rewards: &[Tensor],
    done: &[Vec<bool>],
    early: &[Vec<bool>],
    terminal_values: &[Option<Tensor>],
    final_values: Option<&Tensor>,
    gamma: f64,
) -> Result<Tensor, DiffError> {
    let n = rewards.first().map_or(0, |r| r.numel());
    let mut acc = ActorLoss::new(n, gamma);
    for t in 0..rewards.len() {
        acc.push(&rewards[t], &done[t], &early[t], terminal_values.get(t).and_then(Option::as_ref))?;
    }
    acc.finish(final_values)
}

/// TD(λ) value targets for every step of a window, `[h][n]`.
///
/// `G_t = r_t + γ·((1−λ)·V_{t+1} + λ·G_{t+1})`, where the continuation is cut to
/// `r_t + γ·V_{t+1}` at the last step of the window and on the step an episode ends.
pub fn td_lambda_targets(steps: &[StepRecord], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let h = steps.len();
    let mut out = vec![Vec::new(); h];
    let Some(last) = steps.last() else { return out };
    let n = last.reward.len();
    let mut next_g = vec![0.0; n];
    for t in (0..h).rev() {
        let s = &steps[t];
        let g: Vec<f64> = (0..n)
            .map(|i| {
                let v = s.next_value[i];
                let cont = if s.done[i] || t == h - 1 { v } else { (1.0 - lambda) * v + lambda * next_g[i] };
                s.reward[i] + gamma * cont
            })
            .collect();
        next_g.clone_from(&g);
        out[t] = g;
    }
    out
}

/// Generalized advantage estimates `[h][n]` for values `V(s_t)`.
pub fn gae(steps: &[StepRecord], values: &[Vec<f64>], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let h = steps.len();
    let mut out = vec![Vec::new(); h];
    let Some(last) = steps.last() else { return out };
    let n = last.reward.len();
    let mut next_a = vec![0.0; n];
    for t in (0..h).rev() {
        let s = &steps[t];
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let delta = s.reward[i] + gamma * s.next_value[i] - values[t][i];
                if s.done[i] || t == h - 1 { delta } else { delta + gamma * lambda * next_a[i] }
            })
            .collect();
        next_a.clone_from(&a);
        out[t] = a;
    }
    out
}

/// Mean squared error between critic predictions and fixed targets.
pub fn value_loss(critic: &ValueNet, states: &Tensor, z: &Tensor, targets: &[f64]) -> Result<Tensor, NetError> {
    let v = critic.forward(states, z)?;
    let t = Tensor::new(targets.to_vec(), &[targets.len()]);
    Ok(v.sub(&t)?.square().mean())
}

/// Per-sample clipped surrogate `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: &Tensor, advantages: &Tensor, eps: f64) -> Result<Tensor, DiffError> {
    let unclipped = ratio.mul(advantages)?;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps).mul(advantages)?;
    // min(a, b) = -max(-a, -b)
    Ok(unclipped.neg().maximum(&clipped.neg())?.neg())
}
