use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::CliError;
use crate::env::EnvConfig;
use crate::reward::RewardWeights;
use crate::train::{Algo, TrainConfig};

/// Prefix of environment variables that override config keys. Nested keys are joined
/// with a double underscore: `GRADNAV_TRAIN__ACTOR_LR=2e-3` sets `train.actor_lr`.
pub const ENV_PREFIX: &str = "GRADNAV_";

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Training scenes; more than one enables a curriculum over them.
    pub scenes: Vec<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub reward: RewardWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_algo(Algo::GradNav)
    }
}

impl RunConfig {
    pub fn for_algo(algo: Algo) -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/latest"),
            scenes: Vec::new(),
            env: EnvConfig::default(),
            train: TrainConfig::for_algo(algo),
            reward: RewardWeights::default(),
        }
    }

    /// Copies the shared fields (drone count, episode length, seed) into every section.
    pub fn sync(&mut self) {
        self.env.n_envs = self.train.n_envs;
        self.env.episode_length = self.train.episode_length;
        self.env.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.env.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Parses a complete config file without overrides.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Builds a run config from an optional file, `GRADNAV_*` variables from `vars` and
/// `key=value` overrides, in increasing precedence. The algorithm picks the defaults
/// that the file and overrides are laid over.
pub fn resolve(file: Option<&Path>, vars: &[(String, String)], sets: &[String], algo: Option<Algo>) -> Result<RunConfig, CliError> {
    let mut layer = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let mut env_vars: Vec<&(String, String)> = vars.iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    env_vars.sort();
    for (k, v) in env_vars {
        let key = k[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
        set_key(&mut layer, &key, v).map_err(|e| CliError::Usage(format!("{k}: {e}")))?;
    }
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{s}` is not key=value")))?;
        set_key(&mut layer, k.trim(), v.trim()).map_err(|e| CliError::Usage(format!("--set {k}: {e}")))?;
    }
    if let Some(a) = algo {
        set_key(&mut layer, "train.algo", &format!("\"{}\"", a.name())).expect("algo key");
    }
    let algo = match layer.get("train").and_then(|t| t.get("algo")) {
        Some(v) => Algo::deserialize(v.clone()).map_err(|e| CliError::Usage(format!("train.algo: {e}")))?,
        None => Algo::GradNav,
    };
    let mut base = Table::try_from(RunConfig::for_algo(algo)).map_err(|e| CliError::Runtime(e.to_string()))?;
    merge(&mut base, layer, "")?;
    RunConfig::deserialize(Value::Table(base)).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

/// Overlays `top` onto `base`, rejecting keys the defaults do not know about.
fn merge(base: &mut Table, top: Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in top {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t, &path)?,
            (Some(slot), v) => *slot = v,
            // optional sections are absent from the serialized defaults
            (None, v) if OPTIONAL.contains(&path.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(CliError::Usage(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

const OPTIONAL: &[&str] = &["train.curriculum"];

fn set_key(root: &mut Table, key: &str, raw: &str) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key `{key}`"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let slot = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = slot.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// A TOML literal, or the raw text as a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}").parse::<Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()))
}
