//! Trains a vision policy through a single gate and evaluates ten held-out drones.
//! Takes roughly ten minutes on one core.

use gradnav::cli::{train_run, RunConfig};
use gradnav::gsplat::{make_gate_scene, GateLayout};
use gradnav::train::{evaluate, Algo, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = make_gate_scene(&GateLayout::default(), 0);
    let mut cfg = RunConfig { train: TrainConfig::desk(Algo::GradNav), ..RunConfig::default() };
    cfg.sync();
    let (_, report) = train_run(&cfg, std::slice::from_ref(&scene), Some(std::path::Path::new("runs/gate")))?;
    for m in report.metrics.iter().filter(|m| m.eval_reward.is_some()) {
        println!("epoch {:>3} eval reward {:>6.0} successes {}/10", m.epoch, m.eval_reward.unwrap_or_default(), m.eval_success.unwrap_or(0));
    }
    let r = evaluate(&report.best, &cfg.env, &scene, &cfg.reward, 10, 2024)?;
    println!("held-out: {}/10 successful, reward {:.0} ± {:.0}", r.successes, r.mean_reward, r.std_reward);
    Ok(())
}
