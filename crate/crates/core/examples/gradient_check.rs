//! Reverse-mode gradients of a small expression against central differences.

use gradnav::diffcore::{gradients, relative_error, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new(vec![0.3, -1.2, 0.8, 2.0], &[2, 2]);
    let w = Tensor::new(vec![1.0, -0.5, 0.25, 2.0], &[2, 2]);
    let f = |t: &Tensor| Ok(t.matmul(&w)?.tanh().square().sum());
    let (analytic, numeric) = gradients(&f, &x, 1e-6)?;
    for (a, n) in analytic.iter().zip(&numeric) {
        println!("analytic {a:+.9}  central {n:+.9}");
    }
    println!("relative error {:.2e}", relative_error(&analytic, &numeric));
    Ok(())
}
