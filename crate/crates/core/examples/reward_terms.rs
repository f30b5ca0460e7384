//! Per-term reward breakdown for a drone approaching the gate.

use gradnav::diffcore::Tensor;
use gradnav::dynamics::{quat_from_euler, StateBatch};
use gradnav::gsplat::{make_gate_scene, Camera, GateLayout};
use gradnav::reward::{compute_reward, ActionWindow, RewardBreakdown, RewardWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = make_gate_scene(&GateLayout::default(), 0);
    let w = RewardWeights::default();
    let state = StateBatch::from_rows(&[[3.7, 0.45, 1.4]], &[quat_from_euler(0.05, 0.1, 0.0)], &[[1.0, 0.1, 0.0]], &[[0.0; 3]]);
    let a = Tensor::new(vec![0.1, 0.0, 0.0, 0.2], &[1, 4]);
    let z = Tensor::zeros(&[1, 4]);
    let q0 = Tensor::new(vec![1.0, 0.0, 0.0, 0.0], &[1, 4]);
    let r = compute_reward(&state, &ActionWindow { current: &a, prev: &z, prev2: &z }, &q0, &scene, &scene.obstacle_points(), &Camera::default(), &w)?;
    let b = &r.breakdown[0];
    for ((name, value), weight) in RewardBreakdown::NAMES.iter().zip(b.components()).zip(w.as_array()) {
        println!("{name:<16} {value:>9.4} × {weight:>5.2} = {:>8.4}", value * weight);
    }
    println!("total {:.4}", b.total);
    Ok(())
}
