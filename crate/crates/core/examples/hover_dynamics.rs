//! Rate-controlled quadrotor: hover at the equilibrium thrust, then a roll pulse.

use gradnav::diffcore::{no_grad, Tensor};
use gradnav::dynamics::{step, ControlBatch, DelayState, DroneParams, ParamBatch, StateBatch};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = DroneParams::default();
    let hover = params.hover_thrust();
    let pb = ParamBatch::new(vec![params]);
    let mut state = StateBatch::at_rest(&[[0.0, 0.0, 1.3]]);
    let mut delay = DelayState::hover(&pb);
    no_grad(|| {
        for k in 0..60 {
            let roll = if (20..25).contains(&k) { 1.0 } else { 0.0 };
            let u = ControlBatch { rates: Tensor::new(vec![roll, 0.0, 0.0], &[1, 3]), thrust: Tensor::new(vec![hover], &[1, 1]) };
            (state, delay) = step(&state, &u, &pb, &delay, 0.05)?;
            if k % 10 == 9 {
                let p = state.position(0);
                println!("t={:.2}s p=({:+.3}, {:+.3}, {:+.3}) q={:?}", 0.05 * (k + 1) as f64, p[0], p[1], p[2], state.attitude(0).map(|v| (v * 1e3).round() / 1e3));
            }
        }
        Ok(())
    })
}
