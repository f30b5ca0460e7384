use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{default_scene, load_scene_arg, resolve, train_run, CliError};
use crate::train::Algo;

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Defaults to a generated gate scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Environment steps per run.
    #[arg(long, default_value_t = 100_000)]
    pub budget: u64,
    #[arg(long, default_value_t = 2)]
    pub seeds: u64,
    #[arg(long, default_value = "runs/benchmark")]
    pub out: PathBuf,
    /// Base run config shared by the three algorithms.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drones per run for the short-horizon methods.
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// Drones per run for full-episode BPTT.
    #[arg(long)]
    pub bptt_envs: Option<usize>,
    /// Evaluations along each curve.
    #[arg(long, default_value_t = 10)]
    pub evals: usize,
    #[arg(long = "set")]
    pub sets: Vec<String>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self { scene: None, budget: 100_000, seeds: 2, out: PathBuf::from("runs/benchmark"), config: None, n_envs: None, bptt_envs: None, evals: 10, sets: Vec::new() }
    }
}

/// One epoch of one run in `benchmark.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub algo: Algo,
    pub seed: u64,
    pub epoch: usize,
    pub steps: u64,
    /// Cumulative training time excluding evaluation, ms.
    pub wall_ms: f64,
    pub reward_mean: Option<f64>,
    pub eval_reward: Option<f64>,
    pub eval_success: Option<usize>,
}

const ALGOS: [Algo; 3] = [Algo::GradNav, Algo::Bptt, Algo::Ppo];

/// Trains every algorithm for every seed at the same step budget and writes the
/// combined curves to `<out>/benchmark.csv`, each run in `<out>/<algo>_s<seed>/`.
pub fn run_benchmark(args: &BenchArgs, vars: &[(String, String)]) -> Result<Vec<BenchRow>, CliError> {
    if args.seeds == 0 || args.evals == 0 {
        return Err(CliError::Usage("--seeds and --evals must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for seed in 0..args.seeds {
        for algo in ALGOS {
            let mut cfg = resolve(args.config.as_deref(), vars, &args.sets, Some(algo))?;
            cfg.seed = seed;
            if algo == Algo::Bptt {
                cfg.train.horizon = cfg.train.episode_length;
                if let Some(n) = args.bptt_envs {
                    cfg.train.n_envs = n;
                }
            } else if let Some(n) = args.n_envs {
                cfg.train.n_envs = n;
            }
            let per_epoch = (cfg.train.n_envs * cfg.train.horizon) as u64;
            cfg.train.epochs = (args.budget / per_epoch).max(1) as usize;
            cfg.train.eval_interval = cfg.train.epochs.div_ceil(args.evals);
            cfg.train.curriculum = None;
            cfg.sync();
            cfg.validate()?;
            let scene = match &args.scene {
                Some(p) => load_scene_arg(p)?,
                None => default_scene(0),
            };
            let dir = args.out.join(format!("{}_s{seed}", algo.name()));
            cfg.out = dir.clone();
            cfg.scenes = args.scene.iter().cloned().collect();
            cfg.write(&dir)?;
            let (_, report) = train_run(&cfg, &[scene], Some(&dir))?;
            let mut wall = 0.0;
            let mut steps = 0;
            for (m, t) in report.metrics.iter().zip(&report.timing) {
                wall += t.wall_ms - t.eval_ms;
                steps = m.steps;
                rows.push(BenchRow {
                    algo,
                    seed,
                    epoch: m.epoch,
                    steps,
                    wall_ms: wall,
                    reward_mean: m.reward_mean,
                    eval_reward: m.eval_reward,
                    eval_success: m.eval_success,
                });
            }
            debug_assert_eq!(steps, report.steps);
        }
    }
    let path = args.out.join("benchmark.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(rows)
}

/// Seed-averaged evaluation curves.
#[derive(Clone, Debug, Default)]
pub struct BenchSummary {
    /// Algorithm, best and final mean evaluation reward, steps per run.
    pub per_algo: Vec<(Algo, f64, f64, u64)>,
    /// Mean evaluation reward at each evaluation point: (steps, reward).
    pub curves: Vec<(Algo, Vec<(u64, f64)>)>,
}

impl BenchSummary {
    pub fn from_rows(rows: &[BenchRow]) -> Self {
        let mut s = Self::default();
        for algo in ALGOS {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.algo == algo).collect();
            if mine.is_empty() {
                continue;
            }
            let mut points: Vec<(u64, Vec<f64>)> = Vec::new();
            for r in mine.iter().filter(|r| r.eval_reward.is_some()) {
                match points.iter_mut().find(|p| p.0 == r.steps) {
                    Some(p) => p.1.push(r.eval_reward.unwrap_or_default()),
                    None => points.push((r.steps, vec![r.eval_reward.unwrap_or_default()])),
                }
            }
            points.sort_by_key(|p| p.0);
            let curve: Vec<(u64, f64)> = points.iter().map(|(k, v)| (*k, v.iter().sum::<f64>() / v.len() as f64)).collect();
            let best = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let fin = curve.last().map_or(f64::NAN, |p| p.1);
            let steps = mine.iter().map(|r| r.steps).max().unwrap_or(0);
            s.per_algo.push((algo, best, fin, steps));
            s.curves.push((algo, curve));
        }
        s
    }

    pub fn curve(&self, algo: Algo) -> &[(u64, f64)] {
        self.curves.iter().find(|c| c.0 == algo).map_or(&[], |c| &c.1)
    }

    pub fn best(&self, algo: Algo) -> f64 {
        self.per_algo.iter().find(|p| p.0 == algo).map_or(f64::NAN, |p| p.1)
    }

    pub fn final_reward(&self, algo: Algo) -> f64 {
        self.per_algo.iter().find(|p| p.0 == algo).map_or(f64::NAN, |p| p.2)
    }

    /// Samples `algo` needed before its mean evaluation reward first reached `target`.
    pub fn steps_to_reach(&self, algo: Algo, target: f64) -> Option<u64> {
        self.curve(algo).iter().find(|p| p.1 >= target).map(|p| p.0)
    }

    /// Mean of the evaluation curve, a scale-free proxy for the area under it.
    pub fn mean_curve(&self, algo: Algo) -> f64 {
        let c = self.curve(algo);
        c.iter().map(|p| p.1).sum::<f64>() / c.len().max(1) as f64
    }
}
