use std::cmp::Ordering;

use super::{Camera, DepthImage, Gaussian, Pose, RgbImage, Scene};

/// Added to the diagonal of every projected covariance, px².
const COV2D_REG: f64 = 0.3;
/// Below this accumulated weight a pixel reports the far depth.
const MIN_DEPTH_WEIGHT: f64 = 1e-3;
const FRUSTUM_SLACK: f64 = 1.3;

/// A Gaussian projected into the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Pixel coordinates of the projected mean.
    pub u: f64,
    pub v: f64,
    /// Camera-space depth of the mean.
    pub depth: f64,
    /// 2D covariance in px², including the diagonal regularizer.
    pub cov: [[f64; 2]; 2],
    conic: [f64; 3],
    radius: [f64; 2],
}

impl Projection {
    /// Peak-normalized footprint at pixel `(u, v)`.
    pub fn footprint(&self, u: f64, v: f64) -> f64 {
        let (dx, dy) = (u - self.u, v - self.v);
        let [a, b, c] = self.conic;
        (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
    }
}

/// Projects `g` for a camera at `pose`. `None` when the mean is behind the near plane
/// or the projected covariance is degenerate.
pub fn project_gaussian(g: &Gaussian, pose: &Pose, cam: &Camera) -> Option<Projection> {
    let (w, center) = cam.extrinsics(pose);
    project_with(g, &w, center, cam)
}

fn project_with(g: &Gaussian, w: &[[f64; 3]; 3], center: [f64; 3], cam: &Camera) -> Option<Projection> {
    let d = [g.mean[0] - center[0], g.mean[1] - center[1], g.mean[2] - center[2]];
    let t: [f64; 3] = std::array::from_fn(|i| w[i][0] * d[0] + w[i][1] * d[1] + w[i][2] * d[2]);
    if t[2] < cam.near {
        return None;
    }
    let u = cam.fx * t[0] / t[2] + cam.cx;
    let v = cam.fy * t[1] / t[2] + cam.cy;

    // Jacobian of the perspective map composed with the view rotation. The lateral
    // ratios are clamped slightly beyond the frustum so off-screen primitives at
    // grazing angles do not smear across the image.
    let iz = 1.0 / t[2];
    let lim_x = FRUSTUM_SLACK * (cam.width as f64 / 2.0) / cam.fx;
    let lim_y = FRUSTUM_SLACK * (cam.height as f64 / 2.0) / cam.fy;
    let tx = (t[0] * iz).clamp(-lim_x, lim_x) * t[2];
    let ty = (t[1] * iz).clamp(-lim_y, lim_y) * t[2];
    let j0 = [cam.fx * iz, 0.0, -cam.fx * tx * iz * iz];
    let j1 = [0.0, cam.fy * iz, -cam.fy * ty * iz * iz];
    let m: [[f64; 3]; 2] = [
        std::array::from_fn(|k| (0..3).map(|i| j0[i] * w[i][k]).sum()),
        std::array::from_fn(|k| (0..3).map(|i| j1[i] * w[i][k]).sum()),
    ];
    let sigma = g.covariance();
    let quad = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        (0..3).map(|i| (0..3).map(|j| a[i] * sigma[i][j] * b[j]).sum::<f64>()).sum()
    };
    let c00 = quad(&m[0], &m[0]) + COV2D_REG;
    let c01 = quad(&m[0], &m[1]);
    let c11 = quad(&m[1], &m[1]) + COV2D_REG;
    let det = c00 * c11 - c01 * c01;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some(Projection {
        u,
        v,
        depth: t[2],
        cov: [[c00, c01], [c01, c11]],
        conic: [c11 / det, -c01 / det, c00 / det],
        radius: [3.0 * c00.sqrt(), 3.0 * c11.sqrt()],
    })
}

/// Rendered color and depth plus the per-pixel compositing totals.
#[derive(Clone, Debug)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// Sum of compositing weights per pixel.
    pub weight_sum: Vec<f64>,
    /// Transmittance left after the last Gaussian per pixel.
    pub transmittance: Vec<f64>,
}

/// Front-to-back alpha compositing of every visible Gaussian.
///
/// Pixel `(row, col)` samples the image plane at `u = col`, `v = row`. Gaussians are
/// sorted by camera depth with ties broken on their parameters, so the result does not
/// depend on their order in the scene.
pub fn render(scene: &Scene, pose: &Pose, cam: &Camera) -> Frame {
    let (w, center) = cam.extrinsics(pose);
    let mut visible: Vec<(Projection, &Gaussian)> =
        scene.gaussians.iter().filter_map(|g| project_with(g, &w, center, cam).map(|p| (p, g))).collect();
    visible.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then_with(|| param_order(a.1, b.1)));

    let npix = cam.width * cam.height;
    let mut trans = vec![1.0; npix];
    let mut color = vec![0.0; 3 * npix];
    let mut depth_acc = vec![0.0; npix];
    let mut wsum = vec![0.0; npix];
    for (p, g) in &visible {
        let (Some((c0, c1)), Some((r0, r1))) = (pixel_span(p.u, p.radius[0], cam.width), pixel_span(p.v, p.radius[1], cam.height))
        else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let a = g.alpha * p.footprint(col as f64, row as f64);
                let idx = row * cam.width + col;
                let wgt = a * trans[idx];
                trans[idx] *= 1.0 - a;
                wsum[idx] += wgt;
                depth_acc[idx] += wgt * p.depth;
                for k in 0..3 {
                    color[3 * idx + k] += wgt * g.color[k];
                }
            }
        }
    }
    for idx in 0..npix {
        for k in 0..3 {
            color[3 * idx + k] += trans[idx] * scene.background[k];
        }
    }
    let depth = depth_acc
        .iter()
        .zip(&wsum)
        .map(|(d, s)| if *s < MIN_DEPTH_WEIGHT { cam.far } else { d / s.max(1e-12) })
        .collect();
    Frame {
        rgb: RgbImage { width: cam.width, height: cam.height, data: color },
        depth: DepthImage { width: cam.width, height: cam.height, data: depth },
        weight_sum: wsum,
        transmittance: trans,
    }
}

pub fn render_rgb(scene: &Scene, pose: &Pose, cam: &Camera) -> RgbImage {
    render(scene, pose, cam).rgb
}

pub fn render_depth(scene: &Scene, pose: &Pose, cam: &Camera) -> DepthImage {
    render(scene, pose, cam).depth
}

/// Inclusive pixel index range within `center ± radius`, clipped to the image.
fn pixel_span(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - radius).ceil().max(0.0);
    let hi = (center + radius).floor().min(size as f64 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn param_order(a: &Gaussian, b: &Gaussian) -> Ordering {
    let fa = a.mean.iter().chain(&a.scale).chain(&a.rotation).chain(&a.color).chain(std::iter::once(&a.alpha));
    let fb = b.mean.iter().chain(&b.scale).chain(&b.rotation).chain(&b.color).chain(std::iter::once(&b.alpha));
    fa.zip(fb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Nearest obstacle point inside the camera's view cone and its distance to the body.
pub fn nearest_obstacle(points: &[[f64; 3]], pose: &Pose, cam: &Camera) -> Option<([f64; 3], f64)> {
    let (w, center) = cam.extrinsics(pose);
    let cos_half = cam.fov_half_angle.cos();
    points
        .iter()
        .filter(|m| {
            let d = [m[0] - center[0], m[1] - center[1], m[2] - center[2]];
            let z = w[2][0] * d[0] + w[2][1] * d[1] + w[2][2] * d[2];
            let n = norm(d);
            n > 0.0 && z >= cos_half * n
        })
        .map(|m| (*m, dist(*m, pose.position)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Nearest obstacle point in any direction.
pub fn nearest_obstacle_any(points: &[[f64; 3]], position: [f64; 3]) -> Option<([f64; 3], f64)> {
    points.iter().map(|m| (*m, dist(*m, position))).min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Distance to the nearest visible obstacle, `+inf` when none is in view.
pub fn min_obstacle_distance(scene: &Scene, pose: &Pose, cam: &Camera) -> f64 {
    nearest_obstacle(&scene.obstacle_points(), pose, cam).map_or(f64::INFINITY, |(_, d)| d)
}

fn norm(d: [f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}
