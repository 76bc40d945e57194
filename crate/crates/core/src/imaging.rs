//! Deterministic pre-processing and seeded geometric augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, Point};
use crate::heatmap::ProbabilityMap;
use crate::rng::stream_rng;

/// Network input grid.
pub const TARGET_WIDTH: usize = 256;
pub const TARGET_HEIGHT: usize = 128;

/// Crop rectangle in source pixels, origin at the upper-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropSpec {
    pub const fn full(width: u32, height: u32) -> Self {
        Self {
            x: 0,
            y: 0,
            w: width,
            h: height,
        }
    }

    /// Width must be twice the height to one part in a million.
    pub fn check_ratio(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::InvalidInput(format!(
                "crop ratio: empty crop {}x{}",
                self.w, self.h
            )));
        }
        let ratio = self.w as f64 / self.h as f64;
        if (ratio / 2.0 - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "crop ratio {}x{} is {ratio:.6}, expected 2:1",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        let right = self.x as u64 + self.w as u64;
        let bottom = self.y as u64 + self.h as u64;
        if self.w == 0 || self.h == 0 || right > width as u64 || bottom > height as u64 {
            return Err(Error::InvalidInput(format!(
                "crop ({}, {}, {}, {}) outside {width}x{height} frame",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Maps a source-pixel coordinate into a resized `out_w x out_h` grid.
    pub fn to_resized(&self, p: Point, out_w: usize, out_h: usize) -> Point {
        let sx = out_w as f64 / self.w as f64;
        let sy = out_h as f64 / self.h as f64;
        Point::new(
            (p.x - self.x as f64 + 0.5) * sx - 0.5,
            (p.y - self.y as f64 + 0.5) * sy - 0.5,
        )
    }
}

/// Keys cubic convolution kernel with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Crops and resizes to the standard 256x128 grid.
pub fn crop_resize(frame: &Frame, crop: &CropSpec) -> Result<Frame> {
    crop_resize_to(frame, crop, TARGET_WIDTH, TARGET_HEIGHT)
}

/// Crops and resamples with third-order (bicubic) interpolation, clamping the
/// result to the value range of the cropped source.
pub fn crop_resize_to(frame: &Frame, crop: &CropSpec, out_w: usize, out_h: usize) -> Result<Frame> {
    crop.check_within(frame.width(), frame.height())?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidInput("empty output size".into()));
    }
    let (cx, cy, cw, ch) = (crop.x as usize, crop.y as usize, crop.w as usize, crop.h as usize);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for y in cy..cy + ch {
        for x in cx..cx + cw {
            let v = frame.get(x, y);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }

    // separable taps: (first source index, 4 weights) per output coordinate
    let taps = |n_out: usize, n_src: usize| -> Vec<([usize; 4], [f64; 4])> {
        let scale = n_src as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = (o as f64 + 0.5) * scale - 0.5;
                let base = s.floor();
                let frac = s - base;
                let mut idx = [0usize; 4];
                let mut w = [0.0; 4];
                for k in 0..4 {
                    let i = base as isize - 1 + k as isize;
                    idx[k] = i.clamp(0, n_src as isize - 1) as usize;
                    w[k] = cubic_weight(frac - (k as f64 - 1.0));
                }
                (idx, w)
            })
            .collect()
    };
    let tx = taps(out_w, cw);
    let ty = taps(out_h, ch);

    // horizontal pass over the crop rows
    let mut tmp = vec![0.0f64; out_w * ch];
    for y in 0..ch {
        for (o, (idx, w)) in tx.iter().enumerate() {
            tmp[y * out_w + o] = (0..4).map(|k| w[k] * frame.get(cx + idx[k], cy + y) as f64).sum();
        }
    }
    let mut out = Vec::with_capacity(out_w * out_h);
    for (idx, w) in &ty {
        for x in 0..out_w {
            let v: f64 = (0..4).map(|k| w[k] * tmp[idx[k] * out_w + x]).sum();
            out.push((v as f32).clamp(lo, hi));
        }
    }
    Frame::new(out_w, out_h, out)
}

/// Guard below which a frame counts as constant.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Zero mean, unit population standard deviation. Constant frames map to zeros.
pub fn normalize(frame: &Frame) -> Frame {
    let n = frame.data().len() as f64;
    let mean = frame.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = frame.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let mut out = frame.clone();
    if std < NORMALIZE_EPS {
        out.data_mut().fill(0.0);
    } else {
        for v in out.data_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
    out
}

/// One draw of the geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub zoom: f64,
    pub shear: f64,
    /// Fractions of the image width/height.
    pub shift_x: f64,
    pub shift_y: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

pub const ROTATION_RANGE_DEG: f64 = 20.0;
pub const ZOOM_RANGE: (f64, f64) = (0.7, 1.3);
pub const SHEAR_RANGE: f64 = 0.2;
pub const SHIFT_RANGE: f64 = 0.1;

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        zoom: 1.0,
        shear: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
        flip_h: false,
        flip_v: false,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_deg.abs() <= ROTATION_RANGE_DEG
            && (ZOOM_RANGE.0..=ZOOM_RANGE.1).contains(&self.zoom)
            && self.shear.abs() <= SHEAR_RANGE
            && self.shift_x.abs() <= SHIFT_RANGE
            && self.shift_y.abs() <= SHIFT_RANGE;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "augmentation parameters out of range: {self:?}"
            )))
        }
    }

    /// Forward transform for a `width x height` image: rotation, then shear,
    /// then zoom, then shift, then flips, all about the image center.
    pub fn transform(&self, width: usize, height: usize) -> Affine {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let rot = Affine::linear(c, -s, s, c);
        let shear = Affine::linear(1.0, self.shear, 0.0, 1.0);
        let zoom = Affine::linear(self.zoom, 0.0, 0.0, self.zoom);
        let shift = Affine::translation(self.shift_x * width as f64, self.shift_y * height as f64);
        let flip = Affine::linear(
            if self.flip_h { -1.0 } else { 1.0 },
            0.0,
            0.0,
            if self.flip_v { -1.0 } else { 1.0 },
        );
        Affine::translation(cx, cy)
            .then_after(&flip)
            .then_after(&shift)
            .then_after(&zoom)
            .then_after(&shear)
            .then_after(&rot)
            .then_after(&Affine::translation(-cx, -cy))
    }
}

/// `p' = M p + t` with `M = [[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            a,
            b,
            c,
            d,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx,
            ty,
        }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn then_after(&self, inner: &Affine) -> Affine {
        Affine {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
            tx: self.a * inner.tx + self.b * inner.ty + self.tx,
            ty: self.c * inner.tx + self.d * inner.ty + self.ty,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }

    pub fn inverse(&self) -> Affine {
        let det = self.a * self.d - self.b * self.c;
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Affine {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        }
    }
}

/// Uniform draw inside every augmentation range; flips are fair coins.
pub fn sample_augment(rng_seed: u64) -> AugmentParams {
    let mut rng = stream_rng(rng_seed, "augment", &[]);
    AugmentParams {
        rotation_deg: rng.gen_range(-ROTATION_RANGE_DEG..=ROTATION_RANGE_DEG),
        zoom: rng.gen_range(ZOOM_RANGE.0..=ZOOM_RANGE.1),
        shear: rng.gen_range(-SHEAR_RANGE..=SHEAR_RANGE),
        shift_x: rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
        shift_y: rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
        flip_h: rng.gen_bool(0.5),
        flip_v: rng.gen_bool(0.5),
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

fn warp(src: &[f32], width: usize, height: usize, inverse: &Affine) -> Vec<f32> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..height {
        for x in 0..width {
            let s = inverse.apply(Point::new(x as f64, y as f64));
            let (x0, y0) = (s.x.floor(), s.y.floor());
            let (fx, fy) = (s.x - x0, s.y - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let xa = reflect_index(x0, width);
            let xb = reflect_index(x0 + 1, width);
            let ya = reflect_index(y0, height);
            let yb = reflect_index(y0 + 1, height);
            let at = |xi: usize, yi: usize| src[yi * width + xi] as f64;
            let top = at(xa, ya) * (1.0 - fx) + at(xb, ya) * fx;
            let bottom = at(xa, yb) * (1.0 - fx) + at(xb, yb) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Applies one affine transform identically to a frame and its probability
/// map (bilinear sampling, reflected borders).
pub fn apply_augment(frame: &Frame, map: &ProbabilityMap, params: &AugmentParams) -> Result<(Frame, ProbabilityMap)> {
    let (w, h) = frame.dims();
    if map.dims() != (w, h) {
        return Err(Error::dims(
            format!("{w}x{h}"),
            format!("{}x{}", map.width(), map.height()),
        ));
    }
    let inverse = params.transform(w, h).inverse();
    let f = Frame::new(w, h, warp(frame.data(), w, h, &inverse))?;
    let m = ProbabilityMap::from_values_clamped(w, h, warp(map.values(), w, h, &inverse))?;
    Ok((f, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{make_soft_label, peak};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 17) as f32 / 16.0)
    }

    #[test]
    fn identity_resample_is_exact() {
        let f = ramp(256, 128);
        let out = crop_resize(&f, &CropSpec::full(256, 128)).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn constant_stays_constant() {
        let f = Frame::filled(700, 350, 0.37);
        let out = crop_resize(&f, &CropSpec::full(700, 350)).unwrap();
        assert_eq!(out.dims(), (256, 128));
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    /// Independent area-average 2x downsampler.
    fn area_average_half(f: &Frame) -> Frame {
        Frame::from_fn(f.width() / 2, f.height() / 2, |x, y| {
            (f.get(2 * x, 2 * y) + f.get(2 * x + 1, 2 * y) + f.get(2 * x, 2 * y + 1) + f.get(2 * x + 1, 2 * y + 1))
                / 4.0
        })
    }

    #[test]
    fn downsample_preserves_mean() {
        let f = Frame::from_fn(512, 256, |x, y| {
            0.5 + 0.3 * ((x as f32) * 0.05).sin() * ((y as f32) * 0.08).cos()
                + if (x / 40 + y / 30) % 2 == 0 { 0.1 } else { 0.0 }
        });
        let out = crop_resize(&f, &CropSpec::full(512, 256)).unwrap();
        let oracle = area_average_half(&f);
        let rel = (out.mean() - oracle.mean()).abs() / oracle.mean();
        assert!(rel < 0.01, "relative mean error {rel}");
        let rel_src = (out.mean() - f.mean()).abs() / f.mean();
        assert!(rel_src < 0.01);
    }

    #[test]
    fn crop_bounds_checked() {
        let f = Frame::filled(100, 50, 0.0);
        assert!(crop_resize(
            &f,
            &CropSpec {
                x: 10,
                y: 0,
                w: 100,
                h: 50
            }
        )
        .is_err());
        assert!(crop_resize(
            &f,
            &CropSpec {
                x: 10,
                y: 5,
                w: 80,
                h: 40
            }
        )
        .is_ok());
    }

    #[test]
    fn label_coordinates_follow_crop() {
        let crop = CropSpec {
            x: 100,
            y: 50,
            w: 512,
            h: 256,
        };
        let p = crop.to_resized(Point::new(100.0 + 255.5, 50.0 + 127.5), 256, 128);
        assert_abs_diff_eq!(p.x, 127.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 63.5, epsilon = 1e-12);
    }

    #[test]
    fn normalize_two_values() {
        let f = Frame::new(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(normalize(&f).data(), &[-1.0, 1.0]);
        let c = normalize(&Frame::filled(5, 5, 3.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn normalize_moments_and_idempotence(values in proptest::collection::vec(-50.0f32..50.0, 4..200)) {
            let n = values.len();
            let f = Frame::new(n, 1, values).unwrap();
            let (lo, hi) = f.min_max();
            prop_assume!(hi - lo > 1e-3);
            let g = normalize(&f);
            let mean = g.mean();
            let var = g.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
            let gg = normalize(&g);
            for (a, b) in g.data().iter().zip(gg.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn augment_draws_are_deterministic_and_in_range() {
        assert_eq!(sample_augment(42), sample_augment(42));
        let n = 10_000;
        let draws: Vec<_> = (0..n).map(|s| sample_augment(s as u64)).collect();
        draws.iter().for_each(|p| p.validate().unwrap());
        let mean_rot = draws.iter().map(|p| p.rotation_deg).sum::<f64>() / n as f64;
        assert!(mean_rot.abs() <= 0.6, "mean rotation {mean_rot}");
        let flips = draws.iter().filter(|p| p.flip_h).count() as f64 / n as f64;
        assert!((0.48..=0.52).contains(&flips), "flip_h rate {flips}");
        let vflips = draws.iter().filter(|p| p.flip_v).count() as f64 / n as f64;
        assert!((0.48..=0.52).contains(&vflips), "flip_v rate {vflips}");
    }

    #[test]
    fn identity_augment_is_exact() {
        let f = ramp(256, 128);
        let m = make_soft_label(Some(Point::new(60.0, 30.0)), 256, 128).unwrap();
        let (f2, m2) = apply_augment(&f, &m, &AugmentParams::IDENTITY).unwrap();
        assert_eq!(f2.data(), f.data());
        assert_eq!(m2.values(), m.values());
    }

    #[test]
    fn horizontal_flip_moves_peak() {
        let f = ramp(256, 128);
        let m = make_soft_label(Some(Point::new(60.0, 30.0)), 256, 128).unwrap();
        let p = AugmentParams {
            flip_h: true,
            ..AugmentParams::IDENTITY
        };
        let (_, m2) = apply_augment(&f, &m, &p).unwrap();
        let (at, v) = peak(&m2);
        assert_eq!(at, Point::new(195.0, 30.0));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn flips_are_involutions() {
        let f = ramp(64, 32);
        let m = make_soft_label(Some(Point::new(20.0, 9.0)), 64, 32).unwrap();
        for (fh, fv) in [(true, false), (false, true), (true, true)] {
            let p = AugmentParams {
                flip_h: fh,
                flip_v: fv,
                ..AugmentParams::IDENTITY
            };
            let (f1, m1) = apply_augment(&f, &m, &p).unwrap();
            let (f2, m2) = apply_augment(&f1, &m1, &p).unwrap();
            assert_eq!(f2.data(), f.data());
            assert_eq!(m2.values(), m.values());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = ramp(64, 32);
        let m = make_soft_label(None, 32, 32).unwrap();
        assert!(apply_augment(&f, &m, &AugmentParams::IDENTITY).is_err());
    }

    #[test]
    fn affine_inverse_round_trips() {
        let t = sample_augment(9).transform(256, 128);
        let p = Point::new(33.3, 71.2);
        let back = t.inverse().apply(t.apply(p));
        assert_abs_diff_eq!(back.x, p.x, epsilon = 1e-9);
        assert_abs_diff_eq!(back.y, p.y, epsilon = 1e-9);
    }

    #[test]
    fn reflect_boundary() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }
}
