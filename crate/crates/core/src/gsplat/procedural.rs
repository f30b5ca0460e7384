use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, Gaussian, Scene};

/// Geometry of the procedural gate corridor.
#[derive(Clone, Debug, PartialEq)]
pub struct GateLayout {
    pub gate_x: f64,
    /// Lateral offset of the opening center.
    pub gate_y: f64,
    pub opening_center_z: f64,
    pub opening_width: f64,
    pub opening_height: f64,
    pub bounds: Aabb,
    pub distractors: usize,
}

impl Default for GateLayout {
    fn default() -> Self {
        Self {
            gate_x: 4.0,
            gate_y: 0.0,
            opening_center_z: 1.3,
            opening_width: 1.0,
            opening_height: 1.2,
            bounds: Aabb { min: [-2.0, -3.0, 0.0], max: [12.0, 3.0, 3.0] },
            distractors: 16,
        }
    }
}

const QUAT_ID: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// Corridor with textured walls and floor, a gate wall with one rectangular opening,
/// and randomly placed distractors. Only the gate wall is tagged as obstacle.
pub fn make_gate_scene(layout: &GateLayout, seed: u64) -> Scene {
    let b = layout.bounds;
    let mut gs = Vec::new();

    // Checkerboard side walls, floor and end wall.
    let check = |i: i64, j: i64, a: [f64; 3], c: [f64; 3]| if (i + j).rem_euclid(2) == 0 { a } else { c };
    let light = [0.85, 0.82, 0.75];
    let dark = [0.35, 0.38, 0.45];
    let floor_a = [0.55, 0.45, 0.35];
    let floor_b = [0.25, 0.22, 0.2];
    let tile = 1.0;
    let nx = ((b.max[0] - b.min[0]) / tile).round() as i64;
    let ny = ((b.max[1] - b.min[1]) / tile).round() as i64;
    let nz = ((b.max[2] - b.min[2]) / tile).round() as i64;
    let flat = |normal: usize| {
        let mut s = [0.35 * tile; 3];
        s[normal] = 0.02;
        s
    };
    for i in 0..nx {
        let x = b.min[0] + (i as f64 + 0.5) * tile;
        for k in 0..nz {
            let z = b.min[2] + (k as f64 + 0.5) * tile;
            for (side, y) in [(0, b.min[1]), (1, b.max[1])] {
                gs.push(tile_gaussian([x, y, z], flat(1), check(i + side, k, light, dark)));
            }
        }
        for j in 0..ny {
            let y = b.min[1] + (j as f64 + 0.5) * tile;
            gs.push(tile_gaussian([x, y, b.min[2]], flat(2), check(i, j, floor_a, floor_b)));
        }
    }
    for j in 0..ny {
        let y = b.min[1] + (j as f64 + 0.5) * tile;
        for k in 0..nz {
            let z = b.min[2] + (k as f64 + 0.5) * tile;
            gs.push(tile_gaussian([b.max[0], y, z], flat(0), check(j, k, light, dark)));
        }
    }

    // Gate wall: a panel grid spanning the corridor with the opening left empty.
    let gate_color = [0.9, 0.45, 0.1];
    let frame_color = [0.15, 0.6, 0.9];
    let pitch = 0.3;
    let half_w = layout.opening_width / 2.0;
    let half_h = layout.opening_height / 2.0;
    let (y_lo, y_hi) = (layout.gate_y - half_w, layout.gate_y + half_w);
    let (z_lo, z_hi) = (layout.opening_center_z - half_h, layout.opening_center_z + half_h);
    let ny_gate = ((b.max[1] - b.min[1]) / pitch).round() as i64;
    let nz_gate = ((b.max[2] - b.min[2]) / pitch).round() as i64;
    for j in 0..ny_gate {
        let y = b.min[1] + (j as f64 + 0.5) * pitch;
        for k in 0..nz_gate {
            let z = b.min[2] + (k as f64 + 0.5) * pitch;
            let in_opening = y > y_lo - 0.5 * pitch && y < y_hi + 0.5 * pitch && z > z_lo - 0.5 * pitch && z < z_hi + 0.5 * pitch;
            if !in_opening {
                let mut g = tile_gaussian([layout.gate_x, y, z], [0.03, 0.45 * pitch, 0.45 * pitch], check(j, k, gate_color, light));
                g.obstacle = true;
                gs.push(g);
            }
        }
    }
    // Frame outlining the opening.
    let step = 0.1;
    let mut edge = |p: [f64; 3]| {
        gs.push(Gaussian {
            mean: p,
            scale: [0.05; 3],
            rotation: QUAT_ID,
            color: frame_color,
            alpha: 0.95,
            obstacle: true,
        });
    };
    let n_w = (layout.opening_width / step).round() as usize;
    let n_h = (layout.opening_height / step).round() as usize;
    for i in 0..=n_w {
        let y = y_lo - 0.05 + i as f64 * (layout.opening_width + 0.1) / n_w as f64;
        edge([layout.gate_x, y, z_lo - 0.05]);
        edge([layout.gate_x, y, z_hi + 0.05]);
    }
    for k in 1..n_h {
        let z = z_lo - 0.05 + k as f64 * (layout.opening_height + 0.1) / n_h as f64;
        edge([layout.gate_x, y_lo - 0.05, z]);
        edge([layout.gate_x, y_hi + 0.05, z]);
    }

    // Distractors near the walls, away from the flight corridor.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..layout.distractors {
        let x = rng.random_range(b.min[0] + 0.5..b.max[0] - 0.5);
        let side = if rng.random_bool(0.5) { b.min[1] + 0.3 } else { b.max[1] - 0.3 };
        let z = rng.random_range(b.min[2] + 0.2..b.max[2] - 0.2);
        let s = rng.random_range(0.08..0.2);
        let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        gs.push(Gaussian {
            mean: [x, side, z],
            scale: [s, s * 0.6, s],
            rotation: QUAT_ID,
            color,
            alpha: 0.8,
            obstacle: false,
        });
    }

    let z = layout.opening_center_z;
    let gy = layout.gate_y;
    let gx = layout.gate_x;
    let waypoints = vec![[gx - 2.0, gy, z], [gx, gy, z], [gx + 2.5, gy, z]];
    let reference_trajectory = vec![[0.0, 0.0, z], [gx - 2.0, gy, z], [gx, gy, z], [gx + 2.5, gy, z], [b.max[0] - 1.0, gy, z]];
    Scene { gaussians: gs, background: [0.6, 0.7, 0.85], bounds: b, waypoints, reference_trajectory }
}

fn tile_gaussian(mean: [f64; 3], scale: [f64; 3], color: [f64; 3]) -> Gaussian {
    Gaussian { mean, scale, rotation: QUAT_ID, color, alpha: 0.9, obstacle: false }
}
