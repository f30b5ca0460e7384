//! Command-line front end: run configuration, subcommands and exit codes.
//!
//! Every command is a plain function returning its results, so the binary only
//! parses arguments and prints.

mod bench;
mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::Tensor;
use crate::env::{read_trace, write_trace, CurriculumSchedule, EnvConfig, NavEnv, StepTiming, TraceMeta};
use crate::gsplat::{load_scene, make_gate_scene, render, save_scene, write_pfm, write_ppm, Camera, GateLayout, Pose, Scene};
use crate::nets::{Checkpoint, ACTION_DIM};
use crate::reward::RewardWeights;
use crate::train::{analyze_latents, evaluate, train_bptt, train_grad_nav, train_ppo, write_latent_csv, Agent, Algo, EvalReport, LatentAnalysis, TrainReport};

pub use bench::{run_benchmark, BenchArgs, BenchRow, BenchSummary};
pub use config::{resolve, RunConfig, ENV_PREFIX};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config or input files.
    #[error("{0}")]
    Usage(String),
    /// Failure while running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gradnav", version, about = "Vision-based drone navigation in Gaussian-splat scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write metrics, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Fly a checkpoint on a scene and write one trace per drone.
    Eval(EvalArgs),
    /// Write a procedural gate scene.
    MakeScene(MakeSceneArgs),
    /// Render one view as PPM colour and PFM depth.
    Render(RenderArgs),
    /// Train all three algorithms at a matched sample budget.
    Benchmark(BenchArgs),
    /// Break one simulator step into dynamics, rendering and collision time.
    Timing(TimingArgs),
    /// Project traced latents onto their two principal components.
    AnalyzeLatents(LatentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    /// TOML run config; `GRADNAV_*` variables and flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene file(s); defaults to a generated gate scene.
    #[arg(long, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    /// Cycle through the scenes (5 passes of 100 epochs unless configured).
    #[arg(long)]
    pub curriculum: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// Extra `key=value` overrides, e.g. `train.actor_lr=2e-3`.
    #[arg(long = "set")]
    pub sets: Vec<String>,
}

impl TrainArgs {
    pub fn new(algo: Algo) -> Self {
        Self { algo: Some(algo), config: None, scene: Vec::new(), curriculum: false, seed: None, out: None, epochs: None, n_envs: None, sets: Vec::new() }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config of the checkpoint; defaults to `config.toml` beside it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to the first scene of the run config.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    /// Trace directory; defaults to `eval/` beside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MakeSceneArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gate_y: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub distractors: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Body pose `x y z qw qx qy qz`.
    #[arg(long, allow_hyphen_values = true)]
    pub pose: String,
    /// Output prefix; writes `<prefix>.ppm` and `<prefix>.pfm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config whose camera is used; defaults to the 64×64 camera.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TimingArgs {
    /// Defaults to a generated gate scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub n_envs: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct LatentArgs {
    /// Directory of trace CSVs written by `eval`.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_scene_arg(path: &Path) -> Result<Scene, CliError> {
    load_scene(path).map_err(|e| CliError::Usage(format!("scene {}: {e}", path.display())))
}

/// x of the gate plane: the mean x of the obstacle points.
pub fn gate_x(scene: &Scene) -> Option<f64> {
    let pts = scene.obstacle_points();
    (!pts.is_empty()).then(|| pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64)
}

fn default_scene(seed: u64) -> Scene {
    make_gate_scene(&GateLayout::default(), seed)
}

/// Runs one trainer on `scenes` (the first one seeds the environment).
pub fn train_run(cfg: &RunConfig, scenes: &[Scene], out: Option<&Path>) -> Result<(Agent, TrainReport), CliError> {
    let mut env = NavEnv::new(cfg.env.clone(), scenes[0].clone(), cfg.reward.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut agent = Agent::new(&cfg.train.agent, cfg.env.rate_max, cfg.env.drone.hover_thrust(), cfg.seed);
    let list = if scenes.len() > 1 { scenes } else { &[] };
    let report = match cfg.train.algo {
        Algo::GradNav => train_grad_nav(&cfg.train, &mut env, &mut agent, list, out),
        Algo::Bptt => train_bptt(&cfg.train, &mut env, &mut agent, list, out),
        Algo::Ppo => train_ppo(&cfg.train, &mut env, &mut agent, list, out),
    }
    .map_err(|e| match e {
        crate::train::TrainError::Config(m) => CliError::Usage(m),
        e => runtime(e),
    })?;
    Ok((agent, report))
}

/// Resolves the run config of a `train` invocation.
pub fn train_config(args: &TrainArgs, vars: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut cfg = resolve(args.config.as_deref(), vars, &args.sets, args.algo)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if !args.scene.is_empty() {
        cfg.scenes = args.scene.clone();
    }
    if let Some(n) = args.n_envs {
        cfg.train.n_envs = n;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.curriculum {
        if cfg.scenes.len() < 2 {
            return Err(CliError::Usage(format!("--curriculum needs at least 2 scenes, got {}", cfg.scenes.len())));
        }
        let base = cfg.train.curriculum.clone().unwrap_or_default();
        let sched = CurriculumSchedule { n_scenes: cfg.scenes.len(), ..base };
        cfg.train.epochs = sched.total_epochs();
        cfg.train.curriculum = Some(sched);
    }
    cfg.sync();
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs, vars: &[(String, String)]) -> Result<TrainReport, CliError> {
    let cfg = train_config(args, vars)?;
    let scenes = if cfg.scenes.is_empty() { vec![default_scene(cfg.seed)] } else { cfg.scenes.iter().map(|p| load_scene_arg(p)).collect::<Result<_, _>>()? };
    cfg.write(&cfg.out)?;
    let (_, report) = train_run(&cfg, &scenes, Some(&cfg.out))?;
    Ok(report)
}

/// Agent rebuilt from a run config and a checkpoint file.
pub fn load_agent(cfg: &RunConfig, checkpoint: &Path) -> Result<Agent, CliError> {
    let ck = Checkpoint::read(checkpoint).map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let mut agent = Agent::new(&cfg.train.agent, cfg.env.rate_max, cfg.env.drone.hover_thrust(), cfg.seed);
    agent.load_checkpoint(&ck).map_err(|e| CliError::Usage(format!("checkpoint {} does not fit the configured networks: {e}", checkpoint.display())))?;
    Ok(agent)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let run_dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_path = args.config.clone().unwrap_or_else(|| run_dir.join("config.toml"));
    let cfg = RunConfig::read(&cfg_path)?;
    let agent = load_agent(&cfg, &args.checkpoint)?;
    let (scene, scene_name) = match (&args.scene, cfg.scenes.first()) {
        (Some(p), _) | (None, Some(p)) => (load_scene_arg(p)?, p.display().to_string()),
        (None, None) => (default_scene(cfg.seed), "generated".to_string()),
    };
    let env_cfg = EnvConfig { n_envs: args.n, ..cfg.env.clone() };
    let report = evaluate(&agent, &env_cfg, &scene, &cfg.reward, args.n, args.seed).map_err(runtime)?;
    let out = args.out.clone().unwrap_or_else(|| run_dir.join("eval"));
    write_traces(&out, &report, &scene, &scene_name, args.seed)?;
    Ok(report)
}

/// One `trace_<k>.csv` (plus metadata sidecar) per drone.
pub fn write_traces(dir: &Path, report: &EvalReport, scene: &Scene, scene_name: &str, seed: u64) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    for (k, (rows, d)) in report.traces.iter().zip(&report.drones).enumerate() {
        let meta = TraceMeta {
            scene: scene_name.to_string(),
            seed,
            episode: k,
            steps: rows.len(),
            success: d.success,
            gate_x: gate_x(scene),
            latent_dim: rows.first().map_or(0, |r| r.latent.len()),
        };
        let path = dir.join(format!("trace_{k}.csv"));
        write_trace(&path, &meta, rows).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn cmd_make_scene(args: &MakeSceneArgs) -> Result<Scene, CliError> {
    let layout = GateLayout { gate_y: args.gate_y, distractors: args.distractors, ..GateLayout::default() };
    if args.gate_y.abs() + layout.opening_width / 2.0 > layout.bounds.max[1] {
        return Err(CliError::Usage(format!("gate_y {} puts the opening outside the corridor", args.gate_y)));
    }
    let scene = make_gate_scene(&layout, args.seed);
    save_scene(&scene, &args.out).map_err(runtime)?;
    Ok(scene)
}

pub fn parse_pose(text: &str) -> Result<Pose, CliError> {
    let v: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::Usage(format!("pose value `{s}` is not a number"))))
        .collect::<Result<_, _>>()?;
    if v.len() != 7 {
        return Err(CliError::Usage(format!("pose needs 7 numbers (x y z qw qx qy qz), got {}", v.len())));
    }
    let n = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
    if !(n > 0.0) {
        return Err(CliError::Usage("pose quaternion is zero".into()));
    }
    Ok(Pose::new([v[0], v[1], v[2]], [v[3] / n, v[4] / n, v[5] / n, v[6] / n]))
}

pub fn cmd_render(args: &RenderArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let scene = load_scene_arg(&args.scene)?;
    let pose = parse_pose(&args.pose)?;
    let camera = match &args.config {
        Some(p) => RunConfig::read(p)?.env.camera,
        None => Camera::default(),
    };
    let frame = render(&scene, &pose, &camera);
    let (ppm, pfm) = (args.out.with_extension("ppm"), args.out.with_extension("pfm"));
    if let Some(dir) = ppm.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    write_ppm(&ppm, &frame.rgb).map_err(|e| runtime(format!("{}: {e}", ppm.display())))?;
    write_pfm(&pfm, &frame.depth).map_err(|e| runtime(format!("{}: {e}", pfm.display())))?;
    Ok((ppm, pfm))
}

/// Step-time breakdown of a batch of drones under random stick inputs.
#[derive(Clone, Debug)]
pub struct TimingTable {
    pub n_envs: usize,
    pub steps: usize,
    pub gaussians: usize,
    pub timing: StepTiming,
    /// Dynamics, rendering and collision share in percent.
    pub percent: [f64; 3],
    /// Mean wall-clock per batched step, ms.
    pub step_ms: f64,
}

pub fn cmd_timing(args: &TimingArgs) -> Result<TimingTable, CliError> {
    if args.n_envs == 0 || args.steps == 0 {
        return Err(CliError::Usage("--n-envs and --steps must be at least 1".into()));
    }
    let scene = match &args.scene {
        Some(p) => load_scene_arg(p)?,
        None => default_scene(args.seed),
    };
    let gaussians = scene.gaussians.len();
    let cfg = EnvConfig { n_envs: args.n_envs, seed: args.seed, ..EnvConfig::default() };
    let mut env = NavEnv::new(cfg, scene, RewardWeights::default()).map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    env.take_timing();
    for _ in 0..args.steps {
        let a: Vec<f64> = (0..args.n_envs * ACTION_DIM).map(|k| if k % ACTION_DIM == 3 { 0.0 } else { rng.random_range(-0.2..0.2) }).collect();
        let hover: Vec<f64> = (0..args.n_envs).flat_map(|i| env.hover_action(i)).collect();
        let a: Vec<f64> = a.iter().zip(&hover).map(|(x, h)| (x + h).clamp(-1.0, 1.0)).collect();
        env.step(&Tensor::new(a, &[args.n_envs, ACTION_DIM])).map_err(runtime)?;
        env.detach();
    }
    let timing = env.take_timing();
    let step_ms = timing.total().as_secs_f64() * 1e3 / args.steps as f64;
    Ok(TimingTable { n_envs: args.n_envs, steps: args.steps, gaussians, percent: timing.percentages(), timing, step_ms })
}

pub fn cmd_analyze_latents(args: &LatentArgs) -> Result<LatentAnalysis, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(&args.traces)
        .map_err(|e| CliError::Usage(format!("traces {}: {e}", args.traces.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no trace CSVs in {}", args.traces.display())));
    }
    let traces = files
        .iter()
        .map(|p| read_trace(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let analysis = analyze_latents(&traces).map_err(|e| CliError::Usage(e.to_string()))?;
    write_latent_csv(&args.out, &analysis).map_err(runtime)?;
    Ok(analysis)
}

/// Runs a parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let vars: Vec<(String, String)> = std::env::vars().collect();
    match cli.command {
        Command::Train(a) => {
            let r = cmd_train(&a, &vars)?;
            let last = r.metrics.last();
            println!(
                "trained {} epochs, {} env steps, {} scene transitions, best score {:.1}",
                r.metrics.len(),
                r.steps,
                r.transitions(),
                r.best_score
            );
            if let Some((s, r)) = last.and_then(|m| m.eval_success.zip(m.eval_reward)) {
                println!("last evaluation: {s} successes, reward {r:.1}");
            }
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a)?;
            println!("success {}/{}", r.successes, r.n);
            println!("reward {:.1} ± {:.1}", r.mean_reward, r.std_reward);
        }
        Command::MakeScene(a) => {
            let s = cmd_make_scene(&a)?;
            println!("wrote {} ({} gaussians, {} waypoints)", a.out.display(), s.gaussians.len(), s.waypoints.len());
        }
        Command::Render(a) => {
            let (ppm, pfm) = cmd_render(&a)?;
            println!("wrote {} and {}", ppm.display(), pfm.display());
        }
        Command::Benchmark(a) => {
            let rows = run_benchmark(&a, &vars)?;
            let s = BenchSummary::from_rows(&rows);
            for (algo, best, fin, steps) in &s.per_algo {
                println!("{:<8} best eval {:>8.1}  final eval {:>8.1}  steps {}", algo.name(), best, fin, steps);
            }
            println!("wrote {}", a.out.join("benchmark.csv").display());
        }
        Command::Timing(a) => {
            let t = cmd_timing(&a)?;
            println!("{} drones, {} steps, {} gaussians, {:.2} ms per step", t.n_envs, t.steps, t.gaussians, t.step_ms);
            println!("{:<10} {:>6}", "stage", "%");
            for (name, p) in ["dynamics", "rendering", "collision"].iter().zip(t.percent) {
                println!("{name:<10} {p:>6.1}");
            }
        }
        Command::AnalyzeLatents(a) => {
            let r = cmd_analyze_latents(&a)?;
            for (stage, spread, k) in &r.scatter {
                println!("{stage:?}: scatter {spread:.4} over {k} samples");
            }
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}
