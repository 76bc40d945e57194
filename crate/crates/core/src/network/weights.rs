use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub path: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Trainable parameters in the order given by
/// [`NetworkConfig::tensor_manifest`]. Gradients and optimizer moments use
/// the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    config: NetworkConfig,
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ModelWeights<T> {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .tensor_manifest()
            .into_iter()
            .map(|(path, shape)| {
                let n = shape.iter().product();
                ParamTensor {
                    path,
                    shape,
                    data: vec![T::ZERO; n],
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    path: t.path.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::ZERO; t.data.len()],
                })
                .collect(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, path: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.path == path)
    }

    pub fn tensor_mut(&mut self, path: &str) -> Option<&mut ParamTensor<T>> {
        self.tensors.iter_mut().find(|t| t.path == path)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Path of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.path.as_str())
    }

    pub fn same_structure<U>(&self, other: &ModelWeights<U>) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.path == b.path && a.shape == b.shape)
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn fill(&mut self, value: T) {
        self.tensors.iter_mut().for_each(|t| t.data.fill(value));
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelWeights<T>, scale: T) {
        debug_assert!(self.same_structure(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * *y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    path: t.path.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Flat view by global parameter index: `(tensor, offset)`.
    pub fn locate(&self, mut index: usize) -> Option<(usize, usize)> {
        for (ti, t) in self.tensors.iter().enumerate() {
            if index < t.data.len() {
                return Some((ti, index));
            }
            index -= t.data.len();
        }
        None
    }
}

/// Fan-in scaled uniform kernels (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero
/// biases, deterministic in `config.rng_seed`.
pub fn init_weights(config: &NetworkConfig) -> Result<ModelWeights<f32>> {
    let mut w = ModelWeights::<f32>::zeros(config)?;
    for (i, t) in w.tensors.iter_mut().enumerate() {
        if t.shape.len() != 4 {
            continue;
        }
        let fan_in = (t.shape[1] * t.shape[2] * t.shape[3]) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let mut rng = stream_rng(config.rng_seed, "init", &[i as u64]);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-bound..bound) as f32;
        }
    }
    Ok(w)
}

const MAGIC: &[u8; 4] = b"MTJW";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    path: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    layers: Vec<LayerEntry>,
}

/// Writes the `.mtjw` container: magic `MTJW`, `u32` format version, `u64`
/// header length, JSON header (config and ordered tensor manifest), then all
/// tensors as little-endian `f32` in manifest order.
pub fn write_weights<W: Write>(mut w: W, weights: &ModelWeights<f32>) -> std::io::Result<()> {
    let header = Header {
        config: weights.config.clone(),
        layers: weights
            .tensors
            .iter()
            .map(|t| LayerEntry {
                path: t.path.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(weights.parameter_count() * 4);
    for t in &weights.tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn read_weights<R: Read>(mut r: R) -> Result<ModelWeights<f32>> {
    let bad = |m: String| Error::Weights(m);
    let mut fixed = [0u8; 16];
    r.read_exact(&mut fixed)
        .map_err(|e| bad(format!("truncated preamble: {e}")))?;
    if &fixed[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(fixed[8..16].try_into().unwrap()) as usize;
    if header_len > (1 << 24) {
        return Err(bad(format!("header length {header_len} too large")));
    }
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    let mut weights = ModelWeights::<f32>::zeros(&header.config)?;
    if header.layers.len() != weights.tensors.len() {
        return Err(bad(format!(
            "header lists {} tensors, config implies {}",
            header.layers.len(),
            weights.tensors.len()
        )));
    }
    for (entry, t) in header.layers.iter().zip(&weights.tensors) {
        if entry.path != t.path || entry.shape != t.shape {
            return Err(bad(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                entry.path, entry.shape, t.path, t.shape
            )));
        }
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| bad(format!("payload: {e}")))?;
    if raw.len() != weights.parameter_count() * 4 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            raw.len(),
            weights.parameter_count() * 4
        )));
    }
    let mut chunks = raw.chunks_exact(4);
    for t in weights.tensors.iter_mut() {
        for v in t.data.iter_mut() {
            *v = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok(weights)
}

pub fn save_weights(path: impl AsRef<Path>, weights: &ModelWeights<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_weights(&mut buf, weights).map_err(|e| Error::io(path, e))?;
    // write-then-rename keeps an interrupted run from leaving a torn checkpoint
    let tmp = path.with_extension("mtjw.partial");
    std::fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            depth: 2,
            base_filters: 4,
            input_w: 16,
            input_h: 8,
            kernel_size: 3,
            rng_seed: 5,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_weights(&small()).unwrap();
        let b = init_weights(&small()).unwrap();
        assert_eq!(a, b);
        for t in a.tensors() {
            if t.path.ends_with(".bias") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.path);
            } else {
                let fan_in = (t.shape[1] * t.shape[2] * t.shape[3]) as f32;
                let bound = (6.0 / fan_in).sqrt();
                assert!(t.data.iter().all(|v| v.abs() <= bound));
                assert!(t.data.iter().any(|&v| v != 0.0));
            }
        }
        let c = init_weights(&NetworkConfig { rng_seed: 6, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn encoder_shapes_follow_filter_doubling() {
        let cfg = NetworkConfig::default();
        let manifest = cfg.tensor_manifest();
        let shape = |p: &str| manifest.iter().find(|(n, _)| n == p).unwrap().1.clone();
        assert_eq!(shape("enc0.conv1.weight"), vec![64, 1, 3, 3]);
        assert_eq!(shape("enc3.conv2.weight"), vec![512, 512, 3, 3]);
        assert_eq!(shape("bottom.conv2.weight"), vec![1024, 1024, 3, 3]);
        assert_eq!(shape("dec0.conv1.weight"), vec![64, 128, 3, 3]);
        assert_eq!(shape("head.weight"), vec![1, 64, 1, 1]);
    }

    #[test]
    fn container_round_trip_and_validation() {
        let w = init_weights(&small()).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &w).unwrap();
        assert_eq!(&buf[0..4], b"MTJW");
        assert_eq!(read_weights(buf.as_slice()).unwrap(), w);

        assert!(read_weights(&buf[..buf.len() - 4]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_weights(bad.as_slice()).is_err());

        // tamper with one declared shape
        let text = String::from_utf8_lossy(&buf).into_owned();
        let tampered = text.replacen("[4,1,3,3]", "[4,1,3,2]", 1);
        assert_ne!(text, tampered);
        assert!(read_weights(tampered.as_bytes()).is_err());
    }

    #[test]
    fn locate_walks_tensors() {
        let w = init_weights(&small()).unwrap();
        let n0 = w.tensors()[0].data.len();
        assert_eq!(w.locate(0), Some((0, 0)));
        assert_eq!(w.locate(n0), Some((1, 0)));
        assert_eq!(w.locate(w.parameter_count()), None);
    }
}
