//! Ultrasound-like phantoms of a muscle-tendon junction.
//!
//! Two aponeurosis bands (superficial and deep) converge from the left edge
//! onto the junction, where a single tendon band continues to the right edge.
//! Faint oblique fascicles fill the muscle wedge. The clean band image is
//! multiplied by box-smoothed exponential speckle and optionally box blurred.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabelRecord;
use super::manifest::Instrument;
use crate::error::{Error, Result};
use crate::frame::{Frame, Point};
use crate::rng::stream_rng;

/// Minimum distance of the junction from every border, in pixels.
pub const JUNCTION_MARGIN: f64 = 12.0;

const BACKGROUND: f64 = 0.22;
const FASCICLE_LEVEL: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub junction_x: f64,
    pub junction_y: f64,
    /// Strength of the multiplicative speckle; 0 disables it.
    pub speckle_scale: f64,
    /// Band brightness above background, in (0, 1].
    pub contrast: f64,
    /// Radius of the final box blur; 0 disables it.
    pub blur_radius: usize,
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        let inside = |v: f64, extent: f64| v.is_finite() && v >= JUNCTION_MARGIN && v <= extent - 1.0 - JUNCTION_MARGIN;
        if !inside(self.junction_x, w) || !inside(self.junction_y, h) {
            return Err(Error::InvalidInput(format!(
                "junction ({}, {}) closer than {JUNCTION_MARGIN} px to the border of a {}x{} phantom",
                self.junction_x, self.junction_y, self.width, self.height
            )));
        }
        if !(self.speckle_scale.is_finite() && self.speckle_scale >= 0.0) {
            return Err(Error::InvalidInput("speckle_scale must be >= 0".into()));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidInput("contrast must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn junction(&self) -> Point {
        Point::new(self.junction_x, self.junction_y)
    }
}

/// Appearance presets standing in for two imaging devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomPreset {
    /// High contrast, fine speckle, sharp.
    SyntheticA,
    /// Low contrast, strong speckle, blurred.
    SyntheticB,
}

impl PhantomPreset {
    pub fn from_instrument(instrument: Instrument) -> Option<Self> {
        match instrument {
            Instrument::SyntheticA => Some(PhantomPreset::SyntheticA),
            Instrument::SyntheticB => Some(PhantomPreset::SyntheticB),
            _ => None,
        }
    }

    pub fn instrument(&self) -> Instrument {
        match self {
            PhantomPreset::SyntheticA => Instrument::SyntheticA,
            PhantomPreset::SyntheticB => Instrument::SyntheticB,
        }
    }

    pub fn contrast(&self) -> f64 {
        match self {
            PhantomPreset::SyntheticA => 0.8,
            PhantomPreset::SyntheticB => 0.3,
        }
    }

    pub fn speckle_scale(&self) -> f64 {
        match self {
            PhantomPreset::SyntheticA => 1.0,
            PhantomPreset::SyntheticB => 1.0,
        }
    }

    pub fn blur_radius(&self) -> usize {
        match self {
            PhantomPreset::SyntheticA => 0,
            PhantomPreset::SyntheticB => 2,
        }
    }

    /// Preset parameters with the junction drawn uniformly from the safe
    /// region (plus a few pixels of slack) using `seed`.
    pub fn params(&self, seed: u64, width: usize, height: usize) -> PhantomParams {
        let mut rng = stream_rng(seed, "junction", &[]);
        let margin = JUNCTION_MARGIN + 4.0;
        let jx_hi = (width as f64 - 1.0 - margin).max(margin);
        let jy_hi = (height as f64 - 1.0 - margin).max(margin);
        // quarter-pixel positions keep labels exactly representable
        let quantize = |v: f64| (v * 4.0).round() / 4.0;
        PhantomParams {
            seed,
            width,
            height,
            junction_x: quantize(rng.gen_range(margin..=jx_hi)),
            junction_y: quantize(rng.gen_range(margin..=jy_hi)),
            speckle_scale: self.speckle_scale(),
            contrast: self.contrast(),
            blur_radius: self.blur_radius(),
        }
    }
}

/// A quadratic curve `y(x)` defined on `[x_lo, x_hi]`, drawn with half
/// thickness `half_width`.
struct Band {
    x_lo: f64,
    x_hi: f64,
    c0: f64,
    c1: f64,
    c2: f64,
    half_width: f64,
}

impl Band {
    /// Anti-aliased coverage of pixel center `(x, y)`.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        if x < self.x_lo - 0.5 || x > self.x_hi + 0.5 {
            return 0.0;
        }
        let xc = x.clamp(self.x_lo, self.x_hi);
        let fy = self.c0 + self.c1 * xc + self.c2 * xc * xc;
        let slope = self.c1 + 2.0 * self.c2 * xc;
        let dist = (y - fy).abs() / (1.0 + slope * slope).sqrt();
        (self.half_width + 0.5 - dist).clamp(0.0, 1.0)
    }
}

/// Straight fascicle segment.
struct Segment {
    a: Point,
    b: Point,
    half_width: f64,
}

impl Segment {
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return 0.0;
        }
        let t = (((x - self.a.x) * dx + (y - self.a.y) * dy) / len2).clamp(0.0, 1.0);
        let dist = (x - (self.a.x + t * dx)).hypot(y - (self.a.y + t * dy));
        (self.half_width + 0.5 - dist).clamp(0.0, 1.0)
    }
}

struct Geometry {
    bands: Vec<Band>,
    fascicles: Vec<Segment>,
}

/// Quadratic through `(jx, jy)` and `(0, y_left)` whose shape mixes a straight
/// line and a parabola tangent to the horizontal at the left edge.
fn converging_band(jx: f64, jy: f64, offset: f64, straightness: f64, half_width: f64) -> Band {
    // y(x) = jy + offset * (s*u + (1-s)*u^2), u = (jx - x)/jx
    let s = straightness;
    let u1 = -1.0 / jx;
    let u0 = 1.0;
    // u = u0 + u1 x ; u^2 = 1 + 2 u1 x + u1^2 x^2
    let c0 = jy + offset * (s * u0 + (1.0 - s));
    let c1 = offset * (s * u1 + (1.0 - s) * 2.0 * u1);
    let c2 = offset * (1.0 - s) * u1 * u1;
    Band {
        x_lo: 0.0,
        x_hi: jx,
        c0,
        c1,
        c2,
        half_width,
    }
}

fn geometry(p: &PhantomParams) -> Geometry {
    let mut rng = stream_rng(p.seed, "geometry", &[]);
    let (w, h) = (p.width as f64, p.height as f64);
    let (jx, jy) = (p.junction_x, p.junction_y);
    let thick = (0.03 * h).max(1.0);

    let up = -jy * rng.gen_range(0.45..0.9);
    let down = (h - 1.0 - jy) * rng.gen_range(0.45..0.9);
    let upper = converging_band(jx, jy, up, rng.gen_range(0.6..1.0), thick * rng.gen_range(0.8..1.2));
    let lower = converging_band(jx, jy, down, rng.gen_range(0.6..1.0), thick * rng.gen_range(0.8..1.2));

    let slope = rng.gen_range(-0.12..0.12);
    let tendon = Band {
        x_lo: jx,
        x_hi: w - 1.0,
        c0: jy - slope * jx,
        c1: slope,
        c2: 0.0,
        half_width: thick * rng.gen_range(1.1..1.5),
    };

    // fascicles run from the deep to the superficial aponeurosis
    let eval = |b: &Band, x: f64| b.c0 + b.c1 * x + b.c2 * x * x;
    let spacing = (0.1 * w).max(6.0);
    let lean = rng.gen_range(0.5..1.2) * h;
    let mut fascicles = Vec::new();
    let mut x = rng.gen_range(0.0..spacing);
    while x < jx - 4.0 {
        let y_deep = eval(&lower, x);
        let x_top = (x - lean * 0.5).max(0.0);
        let y_top = eval(&upper, x_top);
        if y_deep - y_top > 4.0 {
            fascicles.push(Segment {
                a: Point::new(x, y_deep),
                b: Point::new(x_top, y_top),
                half_width: 0.4 * thick,
            });
        }
        x += spacing * rng.gen_range(0.7..1.3);
    }

    Geometry {
        bands: vec![upper, lower, tendon],
        fascicles,
    }
}

fn clean_image(p: &PhantomParams, g: &Geometry) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.width * p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let (xf, yf) = (x as f64, y as f64);
            let band = g.bands.iter().map(|b| b.coverage(xf, yf)).fold(0.0, f64::max);
            let fasc = g.fascicles.iter().map(|s| s.coverage(xf, yf)).fold(0.0, f64::max);
            let level = band.max(FASCICLE_LEVEL * fasc);
            out.push(BACKGROUND + p.contrast * (1.0 - BACKGROUND) * level);
        }
    }
    out
}

fn box_filter(data: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return data.to_vec();
    }
    let r = radius as isize;
    let n = (2 * radius + 1) as f64;
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let s: f64 = (-r..=r).map(|d| data[y * width + clampi(x as isize + d, width)]).sum();
            tmp[y * width + x] = s / n;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let s: f64 = (-r..=r).map(|d| tmp[clampi(y as isize + d, height) * width + x]).sum();
            out[y * width + x] = s / n;
        }
    }
    out
}

/// Pixels whose clean band coverage is at least one half.
pub fn band_mask(params: &PhantomParams) -> Vec<bool> {
    let g = geometry(params);
    let mut out = Vec::with_capacity(params.width * params.height);
    for y in 0..params.height {
        for x in 0..params.width {
            let c = g
                .bands
                .iter()
                .map(|b| b.coverage(x as f64, y as f64))
                .fold(0.0, f64::max);
            out.push(c >= 0.5);
        }
    }
    out
}

/// Renders a phantom and its ground-truth label (video and frame ids are
/// left for the caller to fill in).
pub fn synth_phantom(params: &PhantomParams) -> Result<(Frame, LabelRecord)> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let g = geometry(params);
    let mut img = clean_image(params, &g);

    if params.speckle_scale > 0.0 {
        let mut rng = stream_rng(params.seed, "speckle", &[]);
        let raw: Vec<f64> = (0..w * h).map(|_| sample_exp1(&mut rng)).collect();
        let speckle = box_filter(&raw, w, h, 1);
        for (v, s) in img.iter_mut().zip(&speckle) {
            *v *= (1.0 + params.speckle_scale * (s - 1.0)).max(0.0);
        }
    }
    let img = box_filter(&img, w, h, params.blur_radius);

    let frame = Frame::new(w, h, img.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect())?;
    let label = LabelRecord {
        video_id: String::new(),
        frame_idx: 0,
        annotator_id: "GT".into(),
        position: Some(params.junction()),
    };
    Ok((frame, label))
}

/// Unit-rate exponential draw by inversion.
fn sample_exp1<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> PhantomParams {
        PhantomParams {
            seed: 11,
            width: 128,
            height: 64,
            junction_x: 70.0,
            junction_y: 30.5,
            speckle_scale: 1.0,
            contrast: 0.8,
            blur_radius: 0,
        }
    }

    #[test]
    fn deterministic_in_params() {
        let (a, la) = synth_phantom(&base()).unwrap();
        let (b, lb) = synth_phantom(&base()).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(la, lb);
        assert_eq!(la.position, Some(Point::new(70.0, 30.5)));
        let (c, _) = synth_phantom(&PhantomParams { seed: 12, ..base() }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noiseless_junction_is_bright() {
        let p = PhantomParams {
            contrast: 1.0,
            speckle_scale: 0.0,
            ..base()
        };
        let (f, _) = synth_phantom(&p).unwrap();
        let at = f.get(70, 30).max(f.get(70, 31));
        assert!(at as f64 > f.mean() + 0.3, "junction {at} vs mean {}", f.mean());
        assert!((at - 1.0).abs() < 1e-6);
    }

    #[test]
    fn margin_enforced() {
        let p = PhantomParams {
            junction_x: 11.0,
            ..base()
        };
        assert!(synth_phantom(&p).is_err());
        let p = PhantomParams {
            junction_y: 64.0 - 1.0 - 11.5,
            ..base()
        };
        assert!(synth_phantom(&p).is_err());
        let p = PhantomParams {
            junction_x: 12.0,
            junction_y: 51.0,
            ..base()
        };
        assert!(synth_phantom(&p).is_ok());
    }

    fn contrast_gap(preset: PhantomPreset, seed: u64) -> f64 {
        let p = preset.params(seed, 128, 64);
        let (f, _) = synth_phantom(&p).unwrap();
        let mask = band_mask(&p);
        let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for (&v, &m) in f.data().iter().zip(&mask) {
            if m {
                fg += v as f64;
                nf += 1.0;
            } else {
                bg += v as f64;
                nb += 1.0;
            }
        }
        fg / nf - bg / nb
    }

    #[test]
    fn preset_a_has_at_least_twice_the_contrast_of_b() {
        let n = 100;
        let a: f64 = (0..n).map(|s| contrast_gap(PhantomPreset::SyntheticA, s)).sum::<f64>() / n as f64;
        let b: f64 = (0..n)
            .map(|s| contrast_gap(PhantomPreset::SyntheticB, s + 1000))
            .sum::<f64>()
            / n as f64;
        assert!(b > 0.0);
        assert!(a >= 2.0 * b, "gap A {a} vs B {b}");
    }

    #[test]
    fn preset_junctions_respect_margin() {
        for seed in 0..200 {
            let p = PhantomPreset::SyntheticB.params(seed, 128, 64);
            p.validate().unwrap();
        }
    }
}
