use super::Module;
use crate::diffcore::Tensor;

/// Adam with optional global gradient-norm clipping.
///
/// Moment buffers are matched to parameters by position, so every call must pass the
/// same modules in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, initial_lr: lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None, step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    /// Restores the initial learning rate.
    pub fn reset_lr(&mut self) {
        self.lr = self.initial_lr;
    }

    /// Applies one update from the accumulated gradients and replaces every parameter
    /// with a fresh leaf (which also clears its gradient). Parameters that received no
    /// gradient are treated as having a zero gradient. Returns the gradient norm before
    /// clipping.
    pub fn step(&mut self, modules: &mut [&mut dyn Module]) -> f64 {
        let mut params: Vec<&mut Tensor> = modules.iter_mut().flat_map(|m| m.params_mut().into_iter().map(|(_, t)| t)).collect();
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        let grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match self.max_grad_norm {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let g = grads[k][i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                data[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
            **p = Tensor::param(data, p.shape());
        }
        norm
    }
}
