use std::fs;
use std::path::Path;

use super::{Module, NetError};
use crate::diffcore::Tensor;

const MAGIC: &str = "gradnav-weights 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named `f64` arrays stored as a text header followed by little-endian data.
///
/// ```text
/// gradnav-weights 1
/// policy.mlp.0.weight 56x512
/// policy.mlp.0.bias 512
/// step 1
/// end
/// <raw f64 LE values of every entry, in header order>
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Entry { name: name.into(), shape: shape.to_vec(), data });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Adds every parameter of `module` under `prefix.`.
    pub fn add_module(&mut self, prefix: &str, module: &dyn Module) {
        for (name, t) in module.params() {
            self.push(format!("{prefix}.{name}"), t.shape(), t.to_vec());
        }
    }

    /// Replaces every parameter of `module` by the entry stored under `prefix.`.
    pub fn load_module(&self, prefix: &str, module: &mut dyn Module) -> Result<(), NetError> {
        // Check everything before touching the module so a failed load leaves it intact.
        let mut values = Vec::new();
        for (name, t) in module.params() {
            let full = format!("{prefix}.{name}");
            let e = self.get(&full).ok_or_else(|| NetError::MissingParam(full.clone()))?;
            if e.shape != t.shape() {
                return Err(NetError::ParamShape { name: full, expected: t.shape().to_vec(), found: e.shape.clone() });
            }
            values.push(e.data.clone());
        }
        for ((_, t), data) in module.params_mut().into_iter().zip(values) {
            *t = Tensor::param(data, t.shape());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n");
        for e in &self.entries {
            let shape = if e.shape.is_empty() { "scalar".to_string() } else { e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x") };
            header.push_str(&format!("{} {}\n", e.name, shape));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut pos = 0;
        let mut next_line = || -> Result<String, NetError> {
            let end = bytes[pos..].iter().position(|b| *b == b'\n').ok_or_else(|| NetError::Format("unterminated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| NetError::Format("header is not UTF-8".into()))?.to_string();
            pos += end + 1;
            Ok(line)
        };
        if next_line()? != MAGIC {
            return Err(NetError::Format("unrecognized file header".into()));
        }
        let mut specs = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (name, shape) = line.rsplit_once(' ').ok_or_else(|| NetError::Format(format!("bad header line `{line}`")))?;
            let shape = if shape == "scalar" {
                Vec::new()
            } else {
                shape.split('x').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| NetError::Format(format!("bad shape in `{line}`")))?
            };
            if specs.iter().any(|(n, _): &(String, Vec<usize>)| n == name) {
                return Err(NetError::Format(format!("duplicate parameter `{name}`")));
            }
            specs.push((name.to_string(), shape));
        }
        let mut entries = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let count: usize = shape.iter().product();
            let len = count * 8;
            if bytes.len() < pos + len {
                return Err(NetError::MissingParam(name));
            }
            let data = bytes[pos..pos + len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            pos += len;
            entries.push(Entry { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(NetError::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| NetError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| NetError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Writes the parameters of one module.
pub fn save_weights(module: &dyn Module, path: impl AsRef<Path>) -> Result<(), NetError> {
    let mut ck = Checkpoint::new();
    ck.add_module("net", module);
    ck.write(path)
}

/// Loads parameters written by [`save_weights`] into a module of the same shape.
pub fn load_weights(module: &mut dyn Module, path: impl AsRef<Path>) -> Result<(), NetError> {
    Checkpoint::read(path)?.load_module("net", module)
}
