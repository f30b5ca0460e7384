use std::path::Path;

use serde::Serialize;

use super::TrainError;
use crate::env::{TraceMeta, TraceRow};

/// Flight stage relative to the gate plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Approaching,
    Passing,
    After,
}

/// Half-width of the band around the gate plane labelled as passing, m.
pub const PASSING_BAND: f64 = 0.5;

pub fn stage_of(x: f64, gate_x: f64) -> Stage {
    if x < gate_x - PASSING_BAND {
        Stage::Approaching
    } else if x <= gate_x + PASSING_BAND {
        Stage::Passing
    } else {
        Stage::After
    }
}

/// Top two principal directions of a point cloud.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Variances along the components.
    pub variances: [f64; 2],
    pub projections: Vec<[f64; 2]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenvector of a symmetric matrix by power iteration, orthogonal to `avoid`.
fn power_iteration(c: &[Vec<f64>], avoid: &[&[f64]]) -> (Vec<f64>, f64) {
    let d = c.len();
    // Fixed, non-symmetric start so results are reproducible and rarely orthogonal to
    // the answer.
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.1 * k as f64).collect();
    let project_out = |v: &mut Vec<f64>| {
        for a in avoid {
            let p = dot(v, a);
            v.iter_mut().zip(a.iter()).for_each(|(x, y)| *x -= p * y);
        }
    };
    project_out(&mut v);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let mut w: Vec<f64> = c.iter().map(|row| dot(row, &v)).collect();
        project_out(&mut w);
        let norm = normalize(&mut w);
        if norm < 1e-300 {
            return (v, 0.0);
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < 1e-13 {
            break;
        }
    }
    (v, lambda)
}

/// Projects `data` onto its top two principal components. Needs at least 3 samples.
pub fn pca2(data: &[Vec<f64>]) -> Result<Pca, TrainError> {
    if data.len() < 3 {
        return Err(TrainError::Analysis(format!("need at least 3 samples, got {}", data.len())));
    }
    let d = data[0].len();
    if d < 2 || data.iter().any(|r| r.len() != d) {
        return Err(TrainError::Analysis("samples must share a dimension of at least 2".into()));
    }
    let m = data.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| data.iter().map(|r| r[k]).sum::<f64>() / m).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in data {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / m;
            }
        }
    }
    let (c1, l1) = power_iteration(&cov, &[]);
    let (c2, l2) = power_iteration(&cov, &[&c1]);
    let projections = data
        .iter()
        .map(|r| {
            let x: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
            [dot(&x, &c1), dot(&x, &c2)]
        })
        .collect();
    Ok(Pca { mean, components: [c1, c2], variances: [l1, l2], projections })
}

#[derive(Clone, Debug, Serialize)]
pub struct LatentPoint {
    pub stage: Stage,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug)]
pub struct LatentAnalysis {
    pub pca: Pca,
    pub points: Vec<LatentPoint>,
    /// Mean distance to the stage centroid in the projected plane, with sample count.
    pub scatter: Vec<(Stage, f64, usize)>,
}

impl LatentAnalysis {
    pub fn scatter_of(&self, stage: Stage) -> Option<f64> {
        self.scatter.iter().find(|s| s.0 == stage).map(|s| s.1)
    }
}

/// PCA of the latents in flight traces, labelled by stage.
pub fn analyze_latents(traces: &[(TraceMeta, Vec<TraceRow>)]) -> Result<LatentAnalysis, TrainError> {
    let mut data = Vec::new();
    let mut stages = Vec::new();
    for (meta, rows) in traces {
        let gate_x = meta.gate_x.ok_or_else(|| TrainError::Analysis(format!("trace of episode {} has no gate position", meta.episode)))?;
        for r in rows {
            if r.latent.is_empty() {
                return Err(TrainError::Analysis(format!("trace of episode {} has no latents", meta.episode)));
            }
            data.push(r.latent.clone());
            stages.push(stage_of(r.p[0], gate_x));
        }
    }
    let pca = pca2(&data)?;
    let points: Vec<LatentPoint> = pca.projections.iter().zip(&stages).map(|(p, &stage)| LatentPoint { stage, pc1: p[0], pc2: p[1] }).collect();
    let mut scatter = Vec::new();
    for stage in [Stage::Approaching, Stage::Passing, Stage::After] {
        let pts: Vec<&LatentPoint> = points.iter().filter(|p| p.stage == stage).collect();
        if pts.is_empty() {
            continue;
        }
        let k = pts.len() as f64;
        let (cx, cy) = (pts.iter().map(|p| p.pc1).sum::<f64>() / k, pts.iter().map(|p| p.pc2).sum::<f64>() / k);
        let spread = pts.iter().map(|p| ((p.pc1 - cx).powi(2) + (p.pc2 - cy).powi(2)).sqrt()).sum::<f64>() / k;
        scatter.push((stage, spread, pts.len()));
    }
    Ok(LatentAnalysis { pca, points, scatter })
}

/// Writes `stage,pc1,pc2` rows.
pub fn write_latent_csv(path: impl AsRef<Path>, analysis: &LatentAnalysis) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for p in &analysis.points {
        w.serialize(p)?;
    }
    w.flush().map_err(super::io_err(path.as_ref()))?;
    Ok(())
}
