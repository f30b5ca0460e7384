use crate::diffcore::{DiffError, Tensor};

/// Per-feature running mean and variance (parallel Welford merge), used to
/// standardize network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    /// Standardized values are clipped to `±clip`.
    pub clip: f64,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4, clip: 5.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the statistics of the rows of a `[n, dim]` batch.
    pub fn update(&mut self, batch: &[f64]) {
        let d = self.dim();
        let n = batch.len() / d;
        if n == 0 {
            return;
        }
        let mut bmean = vec![0.0; d];
        for row in batch.chunks(d) {
            for (m, x) in bmean.iter_mut().zip(row) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n as f64);
        let mut bvar = vec![0.0; d];
        for row in batch.chunks(d) {
            for ((v, x), m) in bvar.iter_mut().zip(row).zip(&bmean) {
                *v += (x - m) * (x - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n as f64);

        let (na, nb) = (self.count, n as f64);
        let tot = na + nb;
        for k in 0..d {
            let delta = bmean[k] - self.mean[k];
            let m2 = self.var[k] * na + bvar[k] * nb + delta * delta * na * nb / tot;
            self.mean[k] += delta * nb / tot;
            self.var[k] = m2 / tot;
        }
        self.count = tot;
    }

    /// `clip((x - mean) / sqrt(var + 1e-8))` applied as a constant affine map.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        let d = self.dim();
        let mean = Tensor::new(self.mean.clone(), &[d]);
        let std = Tensor::new(self.var.iter().map(|v| (v + 1e-8).sqrt()).collect(), &[d]);
        Ok(x.sub(&mean)?.div(&std)?.clamp(-self.clip, self.clip))
    }

    /// Flat `[mean.., var.., count]` for checkpoints.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.mean.clone();
        v.extend(&self.var);
        v.push(self.count);
        v
    }

    pub fn from_slice(&mut self, data: &[f64]) -> bool {
        let d = self.dim();
        if data.len() != 2 * d + 1 {
            return false;
        }
        self.mean.copy_from_slice(&data[..d]);
        self.var.copy_from_slice(&data[d..2 * d]);
        self.count = data[2 * d];
        true
    }
}
