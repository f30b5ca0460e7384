//! Share of dynamics, rendering and collision checking in one batched step.

use gradnav::cli::{cmd_timing, TimingArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [8, 32, 128] {
        let t = cmd_timing(&TimingArgs { scene: None, n_envs: n, steps: 20, seed: 0 })?;
        let [d, r, c] = t.percent;
        println!("{n:>3} drones: {:>7.2} ms/step  dynamics {d:>5.1}%  rendering {r:>5.1}%  collision {c:>5.1}%", t.step_ms);
    }
    Ok(())
}
