use super::tensor::{no_grad, Tensor};
use super::DiffError;

/// Largest `|analytic - central| / (|central| + 1e-12)` over the coordinates of `x`,
/// where `central` is the central difference of `f` with half-width `step`.
pub fn check_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<f64, DiffError>
where
    F: Fn(&Tensor) -> Result<Tensor, DiffError>,
{
    let (analytic, numeric) = gradients(&f, x, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs() + 1e-12))
        .fold(0.0, f64::max))
}

/// Analytic and central-difference gradients of a scalar function at `x`.
pub fn gradients<F>(f: &F, x: &Tensor, step: f64) -> Result<(Vec<f64>, Vec<f64>), DiffError>
where
    F: Fn(&Tensor) -> Result<Tensor, DiffError>,
{
    let leaf = Tensor::param(x.to_vec(), x.shape());
    let y = f(&leaf)?;
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    let numeric = no_grad(|| {
        let mut out = Vec::with_capacity(x.numel());
        let mut buf = x.to_vec();
        for i in 0..buf.len() {
            let orig = buf[i];
            buf[i] = orig + step;
            let up = f(&Tensor::new(buf.clone(), x.shape()))?.item();
            buf[i] = orig - step;
            let down = f(&Tensor::new(buf.clone(), x.shape()))?.item();
            buf[i] = orig;
            out.push((up - down) / (2.0 * step));
        }
        Ok::<_, DiffError>(out)
    })?;
    Ok((analytic, numeric))
}

/// Norm-wise relative error `‖analytic - numeric‖ / (‖numeric‖ + 1e-12)`.
///
/// Unlike the per-coordinate measure of [`check_gradient`], this does not blow up on
/// coordinates whose true derivative is tiny compared to finite-difference noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum();
    let norm: f64 = numeric.iter().map(|n| n * n).sum();
    diff.sqrt() / (norm.sqrt() + 1e-12)
}

/// [`relative_error`] of `f`'s gradient at `x`.
pub fn gradient_error<F>(f: F, x: &Tensor, step: f64) -> Result<f64, DiffError>
where
    F: Fn(&Tensor) -> Result<Tensor, DiffError>,
{
    let (a, n) = gradients(&f, x, step)?;
    Ok(relative_error(&a, &n))
}
