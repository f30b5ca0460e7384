//! Synthetic Gaussian-splat scenes, a CPU rasterizer for RGB and depth, and the
//! point-cloud queries used for obstacle distances.

mod io;
mod procedural;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_scene, parse_scene, save_scene, scene_to_string, write_pfm, write_ppm};
pub use procedural::{make_gate_scene, GateLayout};
pub use render::{
    min_obstacle_distance, nearest_obstacle, nearest_obstacle_any, project_gaussian, render, render_depth, render_rgb,
    Frame, Projection,
};

use crate::dynamics::rotation_matrix3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("gaussians[{index}]: {msg}")]
    Gaussian { index: usize, msg: String },
    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Anisotropic 3D Gaussian primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    /// Per-axis standard deviations along the principal axes, m.
    pub scale: [f64; 3],
    /// Unit quaternion (scalar-first) orienting the principal axes.
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub alpha: f64,
    /// Counts as an obstacle for distance queries.
    pub obstacle: bool,
}

impl Gaussian {
    pub fn isotropic(mean: [f64; 3], sigma: f64, color: [f64; 3], alpha: f64) -> Self {
        Self { mean, scale: [sigma; 3], rotation: [1.0, 0.0, 0.0, 0.0], color, alpha, obstacle: false }
    }

    /// World covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = rotation_matrix3(self.rotation).unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let mut cov = [[0.0; 3]; 3];
        for (i, row) in cov.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = (0..3).map(|k| r[i][k] * self.scale[k] * self.scale[k] * r[j][k]).sum();
            }
        }
        cov
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let err = |msg: String| Err(SceneError::Gaussian { index, msg });
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return err(format!("scale {:?} must be positive", self.scale));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.rotation.iter().all(|v| *v == 0.0) {
            return err("zero rotation quaternion".into());
        }
        let all: Vec<f64> = self.mean.iter().chain(&self.scale).chain(&self.rotation).chain(&self.color).copied().collect();
        if all.iter().any(|v| !v.is_finite()) {
            return err("non-finite value".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Gaussians plus the navigation annotations of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
    pub bounds: Aabb,
    /// Ordered by strictly increasing x.
    pub waypoints: Vec<[f64; 3]>,
    pub reference_trajectory: Vec<[f64; 3]>,
}

impl Scene {
    /// Scene with no primitives: waypoints along +x, a straight reference line.
    pub fn empty(bounds: Aabb) -> Self {
        Self {
            gaussians: Vec::new(),
            background: [0.0; 3],
            bounds,
            waypoints: Vec::new(),
            reference_trajectory: vec![[bounds.min[0], 0.0, 1.0], [bounds.max[0], 0.0, 1.0]],
        }
    }

    /// Means of the Gaussians tagged as obstacles.
    pub fn obstacle_points(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().filter(|g| g.obstacle).map(|g| g.mean).collect()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        if let Some(w) = self.waypoints.windows(2).position(|w| !(w[1][0] > w[0][0])) {
            return Err(SceneError::Field {
                field: "waypoints".into(),
                msg: format!("x must strictly increase (entries {} and {})", w, w + 1),
            });
        }
        if self.reference_trajectory.len() < 2 {
            return Err(SceneError::Field { field: "reference_trajectory".into(), msg: "needs at least 2 points".into() });
        }
        if (0..3).any(|i| !(self.bounds.min[i] < self.bounds.max[i])) {
            return Err(SceneError::Field { field: "bounds".into(), msg: "min must be below max on every axis".into() });
        }
        Ok(())
    }
}

/// Drone body pose: world position and body-to-world attitude (scalar-first).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: [f64; 3],
    pub attitude: [f64; 4],
}

impl Pose {
    pub fn new(position: [f64; 3], attitude: [f64; 4]) -> Self {
        Self { position, attitude }
    }

    pub fn level(position: [f64; 3]) -> Self {
        Self { position, attitude: [1.0, 0.0, 0.0, 0.0] }
    }
}

/// Pinhole camera rigidly mounted on the body.
///
/// Camera axes follow the usual vision convention (x right, y down, z forward).
/// With zero `mount_pitch` the optical axis is the body +x axis, level with the body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    /// Depth reported where nothing is hit.
    pub far: f64,
    /// Half-angle of the cone used for obstacle visibility, rad.
    pub fov_half_angle: f64,
    /// Downward tilt of the optical axis, rad.
    pub mount_pitch: f64,
    /// Camera center in body coordinates, m.
    pub mount_offset: [f64; 3],
}

impl Default for Camera {
    fn default() -> Self {
        Self::with_fov(64, 64, std::f64::consts::FRAC_PI_2)
    }
}

impl Camera {
    /// Square-pixel camera with horizontal field of view `hfov`.
    pub fn with_fov(width: usize, height: usize, hfov: f64) -> Self {
        let f = width as f64 / 2.0 / (hfov / 2.0).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            near: 0.05,
            far: 10.0,
            fov_half_angle: hfov / 2.0,
            mount_pitch: 0.0,
            mount_offset: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Invalid("camera width and height must be at least 1".into()));
        }
        if !(self.near > 0.0) {
            return Err(SceneError::Invalid("camera near plane must be positive".into()));
        }
        Ok(())
    }

    /// Camera-to-body rotation.
    pub(crate) fn mount_rotation(&self) -> [[f64; 3]; 3] {
        // columns: camera x, y, z expressed in body axes
        let (s, c) = self.mount_pitch.sin_cos();
        let z = [c, 0.0, -s];
        let y = [-s, 0.0, -c];
        let x = [0.0, -1.0, 0.0];
        [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]]
    }

    /// World-to-camera rotation and the camera center in world coordinates.
    pub(crate) fn extrinsics(&self, pose: &Pose) -> ([[f64; 3]; 3], [f64; 3]) {
        let r_wb = rotation_matrix3(pose.attitude).unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let r_bc = self.mount_rotation();
        // W = R_bcᵀ R_wbᵀ
        let mut w = [[0.0; 3]; 3];
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r_bc[k][i] * r_wb[j][k]).sum();
            }
        }
        let mut center = pose.position;
        for (i, c) in center.iter_mut().enumerate() {
            *c += (0..3).map(|k| r_wb[i][k] * self.mount_offset[k]).sum::<f64>();
        }
        (w, center)
    }
}

/// Interleaved RGB image (row-major, 3 values per pixel in [0, 1]).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit quantization, as a camera would deliver.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

/// Row-major depth image, m.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}
