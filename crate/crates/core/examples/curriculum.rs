//! Cycles a small policy through three gate positions and prints the schedule.

use gradnav::cli::{train_run, RunConfig};
use gradnav::env::CurriculumSchedule;
use gradnav::gsplat::{make_gate_scene, GateLayout};
use gradnav::train::{Algo, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenes: Vec<_> = [-1.0, 0.0, 1.0].iter().enumerate().map(|(k, &y)| make_gate_scene(&GateLayout { gate_y: y, ..GateLayout::default() }, k as u64)).collect();
    let sched = CurriculumSchedule { n_scenes: 3, passes: 5, epochs_per_pass: 4, lr_reset: true };
    let train = TrainConfig { n_envs: 8, epochs: sched.total_epochs(), eval_interval: 0, curriculum: Some(sched), ..TrainConfig::desk(Algo::GradNav) };
    let mut cfg = RunConfig { train, ..RunConfig::default() };
    cfg.sync();
    let (_, report) = train_run(&cfg, &scenes, None)?;
    for m in &report.metrics {
        println!("epoch {:>2} scene {} {} actor lr {:.2e}", m.epoch, m.scene, if m.transition == 1 { "switch" } else { "      " }, m.actor_lr);
    }
    println!("{} transitions", report.transitions());
    Ok(())
}
