//! Soft-label probability maps and peak extraction.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::Point;

/// Isotropic label covariance in squared pixels (sigma = 10 px).
pub const LABEL_VARIANCE: f64 = 100.0;

/// Per-pixel junction likelihood in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("probability map must be non-empty".into()));
        }
        if values.len() != width * height {
            return Err(Error::dims(width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    /// Clamps into [0, 1]; NaN is rejected.
    pub fn from_values_clamped(width: usize, height: usize, mut values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("probability map".into()));
        }
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self::new(width, height, values)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// Unnormalized isotropic Gaussian target centred on the label; an absent
/// label gives the all-zero map.
pub fn make_soft_label(position: Option<Point>, width: usize, height: usize) -> Result<ProbabilityMap> {
    make_soft_label_with_variance(position, width, height, LABEL_VARIANCE)
}

/// Label variance for a map `width` pixels wide: the 256-pixel value scaled
/// with the grid, so the kernel covers the same share of the image.
pub fn label_variance_for(width: usize) -> f64 {
    LABEL_VARIANCE * (width as f64 / 256.0).powi(2)
}

/// [`make_soft_label`] with an explicit variance in squared pixels.
pub fn make_soft_label_with_variance(
    position: Option<Point>,
    width: usize,
    height: usize,
    variance: f64,
) -> Result<ProbabilityMap> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "label variance must be positive, got {variance}"
        )));
    }
    let Some(p) = position else {
        return Ok(ProbabilityMap::zeros(width, height));
    };
    if !(p.x >= 0.0 && p.x < width as f64 && p.y >= 0.0 && p.y < height as f64) {
        return Err(Error::InvalidInput(format!(
            "label ({}, {}) outside {width}x{height} map",
            p.x, p.y
        )));
    }
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let dy2 = (y as f64 - p.y).powi(2);
        for x in 0..width {
            let r2 = (x as f64 - p.x).powi(2) + dy2;
            values.push((-r2 / (2.0 * variance)).exp() as f32);
        }
    }
    ProbabilityMap::new(width, height, values)
}

/// Position and value of the maximum; ties go to the smallest `y`, then the
/// smallest `x`.
pub fn peak(map: &ProbabilityMap) -> (Point, f32) {
    let mut best = 0usize;
    for (i, &v) in map.values.iter().enumerate() {
        if v > map.values[best] {
            best = i;
        }
    }
    let (x, y) = (best % map.width, best / map.width);
    (Point::new(x as f64, y as f64), map.values[best])
}

/// Writes the `.pmap` debug raster: `u32` width, `u32` height, then `f32`
/// values, all little-endian.
pub fn write_pmap<W: Write>(mut w: W, map: &ProbabilityMap) -> std::io::Result<()> {
    w.write_all(&(map.width as u32).to_le_bytes())?;
    w.write_all(&(map.height as u32).to_le_bytes())?;
    for v in &map.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_pmap<R: Read>(mut r: R) -> Result<ProbabilityMap> {
    let mut head = [0u8; 8];
    let io = |e| Error::io("<pmap>", e);
    r.read_exact(&mut head).map_err(io)?;
    let width = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(io)?;
    if raw.len() != width * height * 4 {
        return Err(Error::dims(width * height * 4, raw.len()));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ProbabilityMap::new(width, height, values)
}

pub fn save_pmap(path: impl AsRef<Path>, map: &ProbabilityMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + map.values.len() * 4);
    write_pmap(&mut buf, map).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_pmap(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pmap(bytes.as_slice())
}
