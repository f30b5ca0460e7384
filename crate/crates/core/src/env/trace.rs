use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::reward::RewardBreakdown;

/// Episode metadata written next to a trace as `<trace>.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scene: String,
    pub seed: u64,
    pub episode: usize,
    pub steps: usize,
    pub success: bool,
    /// x coordinate of the gate plane, used to label flight stages.
    pub gate_x: Option<f64>,
    pub latent_dim: usize,
}

/// One step of one drone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub p: [f64; 3],
    pub q: [f64; 4],
    pub v: [f64; 3],
    pub action: [f64; 4],
    pub reward: [f64; 12],
    pub total: f64,
    pub done: bool,
    pub early: bool,
    pub latent: Vec<f64>,
}

impl TraceRow {
    pub fn set_reward(&mut self, b: &RewardBreakdown) {
        self.reward = b.components();
        self.total = b.total;
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

fn header(latent_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "a0", "a1", "a2", "a3"].map(String::from).to_vec();
    h.extend(RewardBreakdown::NAMES.iter().map(|n| format!("r_{n}")));
    h.extend(["r_total", "done", "early"].map(String::from));
    h.extend((0..latent_dim).map(|k| format!("z{k}")));
    h
}

/// Writes `rows` as CSV to `path` and `meta` as TOML to the sidecar path.
pub fn write_trace(path: impl AsRef<Path>, meta: &TraceMeta, rows: &[TraceRow]) -> std::io::Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(meta.latent_dim))?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        let floats = r.p.iter().chain(&r.q).chain(&r.v).chain(&r.action).chain(&r.reward).chain([&r.total]);
        rec.extend(floats.map(|x| format!("{x:?}")));
        rec.push(u8::from(r.done).to_string());
        rec.push(u8::from(r.early).to_string());
        rec.extend(r.latent.iter().map(|x| format!("{x:?}")));
        w.write_record(rec)?;
    }
    w.flush()?;
    let meta_text = toml::to_string(meta).map_err(std::io::Error::other)?;
    fs::write(sidecar(path), meta_text)
}

/// Reads a trace and its sidecar.
pub fn read_trace(path: impl AsRef<Path>) -> std::io::Result<(TraceMeta, Vec<TraceRow>)> {
    let path = path.as_ref();
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {m}", path.display()));
    let meta: TraceMeta = toml::from_str(&fs::read_to_string(sidecar(path))?).map_err(|e| invalid(e.to_string()))?;
    let mut rd = csv::Reader::from_path(path)?;
    let expected = header(meta.latent_dim);
    if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(invalid("unexpected column layout".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|e| invalid(format!("column {k}: {e}")));
        let arr = |start: usize, out: &mut [f64]| -> std::io::Result<()> {
            for (j, o) in out.iter_mut().enumerate() {
                *o = f(start + j)?;
            }
            Ok(())
        };
        let mut r = TraceRow { step: rec[0].parse().map_err(|e| invalid(format!("step: {e}")))?, ..Default::default() };
        arr(1, &mut r.p)?;
        arr(4, &mut r.q)?;
        arr(8, &mut r.v)?;
        arr(11, &mut r.action)?;
        arr(15, &mut r.reward)?;
        r.total = f(27)?;
        r.done = &rec[28] == "1";
        r.early = &rec[29] == "1";
        r.latent = vec![0.0; meta.latent_dim];
        arr(30, &mut r.latent)?;
        rows.push(r);
    }
    Ok((meta, rows))
}
