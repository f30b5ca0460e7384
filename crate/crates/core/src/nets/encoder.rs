use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{prefixed, Linear, Module, NetError};
use crate::diffcore::Tensor;

pub const EMBED_DIM: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    /// Output channels of the stride-2 3×3 convolutions.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { channels: vec![8, 16, 32, 64], hidden: 512, width: 64, height: 64 }
    }
}

impl EncoderSpec {
    /// Height and width of the last feature map (each stride-2 convolution halves,
    /// rounding up).
    pub fn feature_size(&self) -> (usize, usize) {
        self.channels.iter().fold((self.height, self.width), |(h, w), _| (h.div_ceil(2), w.div_ceil(2)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Small convolutional image encoder: strided 3×3 convolutions with ReLU, the final
/// feature map flattened (so image position survives), then two linear layers down to
/// a 24-dim embedding.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub convs: Vec<Conv>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub spec: EncoderSpec,
}

impl VisualEncoder {
    pub fn new(spec: &EncoderSpec, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut c_in = 3;
        for &c_out in &spec.channels {
            let fan_in = c_in * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..c_out * fan_in).map(|_| rng.random_range(-bound..=bound)).collect();
            convs.push(Conv { weight: Tensor::param(w, &[c_out, c_in, 3, 3]), bias: Tensor::param(vec![0.0; c_out], &[c_out]) });
            c_in = c_out;
        }
        let (h, w) = spec.feature_size();
        Self {
            convs,
            fc1: Linear::new(c_in * h * w, spec.hidden, 6f64.sqrt(), rng),
            fc2: Linear::new(spec.hidden, EMBED_DIM, 1.0, rng),
            spec: spec.clone(),
        }
    }

    /// Embeddings `[n, 24]` for images `[n, 3, H, W]` with values in `[0, 1]`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor, NetError> {
        let s = images.shape();
        let expected = [s.first().copied().unwrap_or(0), 3, self.spec.height, self.spec.width];
        if s != expected {
            return Err(NetError::Shape { what: "encoder image", expected: expected.to_vec(), got: s.to_vec() });
        }
        let n = s[0];
        let mut h = images.clone();
        for c in &self.convs {
            h = h.conv2d(&c.weight, &c.bias, 2, 1)?.relu();
        }
        let flat = h.reshape(&[n, h.numel() / n.max(1)])?;
        Ok(self.fc2.forward(&self.fc1.forward(&flat)?.relu())?)
    }

    /// Converts 8-bit interleaved RGB images (`H×W×3` each) to a `[n, 3, H, W]` tensor.
    pub fn images_to_tensor(&self, images: &[&[u8]]) -> Result<Tensor, NetError> {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for img in images {
            if img.len() != 3 * w * h {
                return Err(NetError::Shape { what: "encoder image bytes", expected: vec![3 * w * h], got: vec![img.len()] });
            }
            for c in 0..3 {
                data.extend(img.iter().skip(c).step_by(3).map(|v| *v as f64 / 255.0));
            }
        }
        Ok(Tensor::new(data, &[images.len(), 3, h, w]))
    }
}

impl Module for VisualEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.push((format!("conv{i}.weight"), &c.weight));
            v.push((format!("conv{i}.bias"), &c.bias));
        }
        v.extend(prefixed("fc1", self.fc1.params()));
        v.extend(prefixed("fc2", self.fc2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            v.push((format!("conv{i}.weight"), &mut c.weight));
            v.push((format!("conv{i}.bias"), &mut c.bias));
        }
        v.extend(prefixed("fc1", self.fc1.params_mut()));
        v.extend(prefixed("fc2", self.fc2.params_mut()));
        v
    }
}
