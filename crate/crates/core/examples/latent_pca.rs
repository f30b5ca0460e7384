//! Principal components of the context latent along flights through the gate, using a
//! checkpoint from `train_gate` (default `runs/gate/best.ckpt`).

use gradnav::cli::{load_agent, RunConfig};
use gradnav::env::TraceMeta;
use gradnav::gsplat::{make_gate_scene, GateLayout};
use gradnav::train::{analyze_latents, evaluate, Algo, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = std::env::args().nth(1).unwrap_or_else(|| "runs/gate/best.ckpt".into());
    let mut cfg = RunConfig { train: TrainConfig::desk(Algo::GradNav), ..RunConfig::default() };
    cfg.sync();
    let agent = load_agent(&cfg, std::path::Path::new(&ckpt))?;
    let layout = GateLayout::default();
    let scene = make_gate_scene(&layout, 0);
    let r = evaluate(&agent, &cfg.env, &scene, &cfg.reward, 10, 2024)?;
    let traces: Vec<_> = r
        .traces
        .into_iter()
        .map(|rows| (TraceMeta { gate_x: Some(layout.gate_x), latent_dim: rows[0].latent.len(), ..TraceMeta::default() }, rows))
        .collect();
    let a = analyze_latents(&traces)?;
    println!("explained variance of the two components: {:.4} {:.4}", a.pca.variances[0], a.pca.variances[1]);
    for (stage, scatter, n) in &a.scatter {
        println!("{stage:?}: scatter {scatter:.4} over {n} steps");
    }
    Ok(())
}
