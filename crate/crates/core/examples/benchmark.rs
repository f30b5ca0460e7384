//! Short-horizon actor-critic, full-episode BPTT and PPO at a matched sample budget.
//! Pass the budget (default 30000 steps); curves go to `runs/benchmark/benchmark.csv`.

use gradnav::cli::{run_benchmark, BenchArgs, BenchSummary, RunConfig};
use gradnav::train::{Algo, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget = std::env::args().nth(1).map_or(Ok(30_000), |s| s.parse())?;
    let out = std::path::PathBuf::from("runs/benchmark");
    let mut base = RunConfig { train: TrainConfig::desk(Algo::GradNav), ..RunConfig::default() };
    base.sync();
    let config = base.write(&out)?;
    let args = BenchArgs { budget, seeds: 1, out, config: Some(config), n_envs: Some(16), bptt_envs: Some(16), ..BenchArgs::default() };
    let rows = run_benchmark(&args, &[])?;
    let s = BenchSummary::from_rows(&rows);
    for (algo, curve) in &s.curves {
        let pts: Vec<String> = curve.iter().map(|(k, r)| format!("{k}:{r:.0}")).collect();
        println!("{:<8} {}", algo.name(), pts.join(" "));
    }
    Ok(())
}
