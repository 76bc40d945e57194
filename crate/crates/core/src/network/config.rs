use serde::{Deserialize, Serialize};

use super::ops::ConvGeom;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of pooling levels.
    pub depth: usize,
    /// Filters at the first level; doubled after every pooling.
    pub base_filters: usize,
    pub input_w: usize,
    pub input_h: usize,
    pub kernel_size: usize,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_filters: 64,
            input_w: 256,
            input_h: 128,
            kernel_size: 3,
            rng_seed: 0,
        }
    }
}

/// A convolution of the network together with the names of its tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub geom: ConvGeom,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 {
            return Err(Error::InvalidInput("depth and base_filters must be >= 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        let unit = 1usize << self.depth;
        if self.input_w == 0
            || self.input_h == 0
            || !self.input_w.is_multiple_of(unit)
            || !self.input_h.is_multiple_of(unit)
        {
            return Err(Error::InvalidInput(format!(
                "input {}x{} not divisible by 2^{}",
                self.input_w, self.input_h, self.depth
            )));
        }
        Ok(())
    }

    /// Filters at encoder level `level` (`level == depth` is the bottleneck).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn encoder_filters(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.filters(l)).collect()
    }

    /// Intermediate channels of the attention gate on level `level`.
    pub fn gate_channels(&self, level: usize) -> usize {
        (self.filters(level) / 2).max(1)
    }

    /// Every convolution in parameter order.
    pub fn layers(&self) -> Vec<ConvLayer> {
        let k = self.kernel_size;
        let same = |name: String, cin, cout| ConvLayer {
            name,
            geom: ConvGeom {
                cin,
                cout,
                k,
                stride: 1,
                pad: k / 2,
            },
        };
        let pointwise = |name: String, cin, cout| ConvLayer {
            name,
            geom: ConvGeom {
                cin,
                cout,
                k: 1,
                stride: 1,
                pad: 0,
            },
        };
        let mut out = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.filters(l - 1) };
            out.push(same(format!("enc{l}.conv1"), cin, self.filters(l)));
            out.push(same(format!("enc{l}.conv2"), self.filters(l), self.filters(l)));
        }
        let d = self.depth;
        out.push(same("bottom.conv1".into(), self.filters(d - 1), self.filters(d)));
        out.push(same("bottom.conv2".into(), self.filters(d), self.filters(d)));
        for l in (0..self.depth).rev() {
            let (f, below, inter) = (self.filters(l), self.filters(l + 1), self.gate_channels(l));
            out.push(same(format!("dec{l}.up"), below, f));
            out.push(ConvLayer {
                name: format!("dec{l}.gate.skip"),
                geom: ConvGeom {
                    cin: f,
                    cout: inter,
                    k: 2,
                    stride: 2,
                    pad: 0,
                },
            });
            out.push(pointwise(format!("dec{l}.gate.signal"), below, inter));
            out.push(pointwise(format!("dec{l}.gate.psi"), inter, 1));
            out.push(same(format!("dec{l}.conv1"), 2 * f, f));
            out.push(same(format!("dec{l}.conv2"), f, f));
        }
        out.push(pointwise("head".into(), self.filters(0), 1));
        out
    }

    /// `(path, shape)` of every parameter tensor in storage order.
    pub fn tensor_manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                let g = l.geom;
                [
                    (format!("{}.weight", l.name), vec![g.cout, g.cin, g.k, g.k]),
                    (format!("{}.bias", l.name), vec![g.cout]),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_manifest()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
