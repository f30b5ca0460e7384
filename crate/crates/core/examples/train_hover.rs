//! Learns to hover at 1.3 m with the short-horizon actor-critic (about two minutes).

use gradnav::cli::{train_run, RunConfig};
use gradnav::gsplat::{make_gate_scene, GateLayout};
use gradnav::reward::RewardWeights;
use gradnav::train::{evaluate, Algo, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scene = make_gate_scene(&GateLayout::default(), 0);
    scene.gaussians.retain(|g| !g.obstacle);
    let mut cfg = RunConfig { train: TrainConfig { epochs: 200, ..TrainConfig::desk(Algo::GradNav) }, reward: RewardWeights::default().hover_only(), ..RunConfig::default() };
    cfg.sync();
    let (agent, report) = train_run(&cfg, &[scene.clone()], Some(std::path::Path::new("runs/hover")))?;
    for m in report.metrics.iter().filter(|m| m.eval_reward.is_some()) {
        println!("epoch {:>3} steps {:>6} eval reward {:.0}", m.epoch, m.steps, m.eval_reward.unwrap_or_default());
    }
    let r = evaluate(&agent, &cfg.env, &scene, &cfg.reward, 10, 2024)?;
    println!("mean height error {:.3} m", r.mean_height_error());
    Ok(())
}
