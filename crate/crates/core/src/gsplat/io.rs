use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use toml::{Table, Value};

use super::{Aabb, DepthImage, Gaussian, RgbImage, Scene, SceneError};

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    parse_scene(&text)
}

/// Parses scene TOML:
///
/// ```toml
/// background = [0.5, 0.6, 0.7]
/// bounds = { min = [-2.0, -3.0, 0.0], max = [12.0, 3.0, 3.0] }
/// waypoints = [[2.0, 0.0, 1.3], [4.0, 0.0, 1.3]]
/// reference_trajectory = [[0.0, 0.0, 1.3], [4.0, 0.0, 1.3]]
/// gaussians = [
///   { mu = [4.0, 0.5, 1.3], scale = [0.05, 0.05, 0.05], rot = [1.0, 0.0, 0.0, 0.0],
///     color = [0.8, 0.1, 0.1], alpha = 0.9, obstacle = true },
/// ]
/// ```
pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| SceneError::Parse(e.to_string()))?;
    let field_err = |field: &str, msg: String| SceneError::Field { field: field.into(), msg };

    let background = match table.get("background") {
        Some(v) => vec3(v).map_err(|m| field_err("background", m))?,
        None => [0.0; 3],
    };
    let bounds = table.get("bounds").ok_or_else(|| field_err("bounds", "missing".into()))?;
    let bounds = match bounds {
        Value::Table(t) => Aabb {
            min: vec3(t.get("min").ok_or_else(|| field_err("bounds.min", "missing".into()))?)
                .map_err(|m| field_err("bounds.min", m))?,
            max: vec3(t.get("max").ok_or_else(|| field_err("bounds.max", "missing".into()))?)
                .map_err(|m| field_err("bounds.max", m))?,
        },
        _ => return Err(field_err("bounds", "expected a table with `min` and `max`".into())),
    };
    let waypoints = match table.get("waypoints") {
        Some(v) => points(v, "waypoints")?,
        None => Vec::new(),
    };
    let reference_trajectory = points(
        table.get("reference_trajectory").ok_or_else(|| field_err("reference_trajectory", "missing".into()))?,
        "reference_trajectory",
    )?;
    let gaussians = match table.get("gaussians") {
        Some(Value::Array(items)) => items.iter().enumerate().map(|(i, v)| gaussian(i, v)).collect::<Result<_, _>>()?,
        Some(_) => return Err(field_err("gaussians", "expected an array".into())),
        None => Vec::new(),
    };
    let scene = Scene { gaussians, background, bounds, waypoints, reference_trajectory };
    scene.validate()?;
    Ok(scene)
}

fn gaussian(index: usize, v: &Value) -> Result<Gaussian, SceneError> {
    let err = |msg: String| SceneError::Gaussian { index, msg };
    let t = v.as_table().ok_or_else(|| err("expected a table".into()))?;
    let get = |key: &str| t.get(key).ok_or_else(|| err(format!("missing field `{key}`")));
    let named = |key: &str, m: String| err(format!("`{key}`: {m}"));
    let rot = floats(get("rot")?).map_err(|m| named("rot", m))?;
    let rotation: [f64; 4] = rot.try_into().map_err(|r: Vec<f64>| named("rot", format!("expected 4 numbers, got {}", r.len())))?;
    Ok(Gaussian {
        mean: vec3(get("mu")?).map_err(|m| named("mu", m))?,
        scale: vec3(get("scale")?).map_err(|m| named("scale", m))?,
        rotation,
        color: vec3(get("color")?).map_err(|m| named("color", m))?,
        alpha: number(get("alpha")?).map_err(|m| named("alpha", m))?,
        obstacle: match t.get("obstacle") {
            None => false,
            Some(Value::Boolean(b)) => *b,
            Some(_) => return Err(named("obstacle", "expected a boolean".into())),
        },
    })
}

fn number(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {}", other.type_str())),
    }
}

fn floats(v: &Value) -> Result<Vec<f64>, String> {
    v.as_array().ok_or_else(|| format!("expected an array, got {}", v.type_str()))?.iter().map(number).collect()
}

fn vec3(v: &Value) -> Result<[f64; 3], String> {
    let f = floats(v)?;
    f.try_into().map_err(|f: Vec<f64>| format!("expected 3 numbers, got {}", f.len()))
}

fn points(v: &Value, field: &str) -> Result<Vec<[f64; 3]>, SceneError> {
    let arr = v
        .as_array()
        .ok_or_else(|| SceneError::Field { field: field.into(), msg: "expected an array of points".into() })?;
    arr.iter()
        .enumerate()
        .map(|(i, p)| vec3(p).map_err(|msg| SceneError::Field { field: format!("{field}[{i}]"), msg }))
        .collect()
}

/// Serializes a scene in the format read by [`parse_scene`]. Floats use the shortest
/// representation that round-trips, so save followed by load is exact.
pub fn scene_to_string(scene: &Scene) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "background = {}", arr(&scene.background));
    let _ = writeln!(s, "bounds = {{ min = {}, max = {} }}", arr(&scene.bounds.min), arr(&scene.bounds.max));
    let _ = writeln!(s, "waypoints = [{}]", scene.waypoints.iter().map(|p| arr(p)).collect::<Vec<_>>().join(", "));
    let _ = writeln!(
        s,
        "reference_trajectory = [{}]",
        scene.reference_trajectory.iter().map(|p| arr(p)).collect::<Vec<_>>().join(", ")
    );
    s.push_str("gaussians = [\n");
    for g in &scene.gaussians {
        let _ = writeln!(
            s,
            "  {{ mu = {}, scale = {}, rot = {}, color = {}, alpha = {:?}, obstacle = {} }},",
            arr(&g.mean),
            arr(&g.scale),
            arr(&g.rotation),
            arr(&g.color),
            g.alpha,
            g.obstacle
        );
    }
    s.push_str("]\n");
    s
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    fs::write(path, scene_to_string(scene)).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

fn arr(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "))
}

/// Binary PPM (P6), 8 bits per channel.
pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.to_u8())?;
    f.flush()
}

/// Grayscale little-endian PFM; rows are stored bottom to top as the format requires.
pub fn write_pfm(path: impl AsRef<Path>, img: &DepthImage) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            f.write_all(&(img.at(row, col) as f32).to_le_bytes())?;
        }
    }
    f.flush()
}
