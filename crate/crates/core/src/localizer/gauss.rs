use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::heatmap::{peak, ProbabilityMap};

/// Elliptical 2-D Gaussian `A exp(-(a dx^2 + 2 b dx dy + c dy^2)) + d`, with
/// `a, b, c` the quadratic-form coefficients of spreads `sigma_x, sigma_y`
/// rotated by `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussParams {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
    pub offset: f64,
}

pub const N_PARAMS: usize = 7;

impl GaussParams {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.amplitude,
            self.x0,
            self.y0,
            self.sigma_x,
            self.sigma_y,
            self.theta,
            self.offset,
        ]
    }

    pub fn from_array(p: [f64; N_PARAMS]) -> Self {
        Self {
            amplitude: p[0],
            x0: p[1],
            y0: p[2],
            sigma_x: p[3],
            sigma_y: p[4],
            theta: p[5],
            offset: p[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn coefficients(&self) -> (f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (s2, sx2, sy2) = ((2.0 * self.theta).sin(), self.sigma_x.powi(2), self.sigma_y.powi(2));
        (
            c * c / (2.0 * sx2) + s * s / (2.0 * sy2),
            -s2 / (4.0 * sx2) + s2 / (4.0 * sy2),
            s * s / (2.0 * sx2) + c * c / (2.0 * sy2),
        )
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (a, b, c) = self.coefficients();
        let (dx, dy) = (x - self.x0, y - self.y0);
        self.amplitude * (-(a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp() + self.offset
    }

    /// Model value and its partial derivatives in [`Self::to_array`] order.
    pub fn eval_with_gradient(&self, x: f64, y: f64) -> (f64, [f64; N_PARAMS]) {
        let (sn, cs) = self.theta.sin_cos();
        let (sin2, cos2) = ((2.0 * self.theta).sin(), (2.0 * self.theta).cos());
        let (sx, sy) = (self.sigma_x, self.sigma_y);
        let (sx2, sy2, sx3, sy3) = (sx * sx, sy * sy, sx * sx * sx, sy * sy * sy);
        let a = cs * cs / (2.0 * sx2) + sn * sn / (2.0 * sy2);
        let b = -sin2 / (4.0 * sx2) + sin2 / (4.0 * sy2);
        let c = sn * sn / (2.0 * sx2) + cs * cs / (2.0 * sy2);
        let (dx, dy) = (x - self.x0, y - self.y0);
        let (dxx, dxy, dyy) = (dx * dx, dx * dy, dy * dy);
        let e = (-(a * dxx + 2.0 * b * dxy + c * dyy)).exp();
        let ae = self.amplitude * e;
        // d(model)/d(q) = -A e dQ/dq for each coefficient-borne parameter
        let quad = |da: f64, db: f64, dc: f64| -ae * (da * dxx + 2.0 * db * dxy + dc * dyy);
        let grad = [
            e,
            ae * (2.0 * a * dx + 2.0 * b * dy),
            ae * (2.0 * b * dx + 2.0 * c * dy),
            quad(-cs * cs / sx3, sin2 / (2.0 * sx3), -sn * sn / sx3),
            quad(-sn * sn / sy3, -sin2 / (2.0 * sy3), -cs * cs / sy3),
            quad(
                sin2 * (1.0 / sy2 - 1.0 / sx2) / 2.0,
                cos2 * (1.0 / sy2 - 1.0 / sx2) / 2.0,
                sin2 * (1.0 / sx2 - 1.0 / sy2) / 2.0,
            ),
            1.0,
        ];
        (ae + self.offset, grad)
    }

    /// Same Gaussian with `sigma_x >= sigma_y` and `theta` in `(-pi/2, pi/2]`.
    pub fn canonical(&self) -> Self {
        let mut p = *self;
        if p.sigma_x < p.sigma_y {
            std::mem::swap(&mut p.sigma_x, &mut p.sigma_y);
            p.theta += FRAC_PI_2;
        }
        // the model has period pi in theta
        while p.theta > FRAC_PI_2 {
            p.theta -= std::f64::consts::PI;
        }
        while p.theta <= -FRAC_PI_2 {
            p.theta += std::f64::consts::PI;
        }
        p
    }
}

/// Box constraints for the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Bounds {
    /// `A in [0, 2]`, centre inside the map, spreads in `[0.5, max(w, h)]`,
    /// `theta in [-pi/2, pi/2]`, `d in [-0.5, 0.5]`.
    pub fn for_map(width: usize, height: usize) -> Self {
        let extent = width.max(height) as f64;
        Self {
            lower: [0.0, 0.0, 0.0, 0.5, 0.5, -FRAC_PI_2, -0.5],
            upper: [
                2.0,
                width as f64 - 1.0,
                height as f64 - 1.0,
                extent,
                extent,
                FRAC_PI_2,
                0.5,
            ],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && l < u)
    }

    pub fn contains(&self, p: &[f64; N_PARAMS]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v >= l && v <= u)
    }
}

/// Minimum dynamic range (max - min) of a map worth fitting.
pub const MIN_DYNAMIC_RANGE: f32 = 0.05;

/// Starting point of the fit and whether the map is degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialGuess {
    pub params: GaussParams,
    pub degenerate: bool,
}

/// `A = max - 2 SD`, centre at the arg-max, `sigma_x = sigma_y = 5 SD`,
/// `theta = d = 0`, with `SD` the standard deviation of all map values.
pub fn init_guess(map: &ProbabilityMap) -> InitialGuess {
    let (at, max) = peak(map);
    let values = map.values();
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let params = GaussParams {
        amplitude: max as f64 - 2.0 * sd,
        x0: at.x,
        y0: at.y,
        sigma_x: 5.0 * sd,
        sigma_y: 5.0 * sd,
        theta: 0.0,
        offset: 0.0,
    };
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let degenerate = !(params.amplitude > 0.0) || !(sd > 0.0) || max - min < MIN_DYNAMIC_RANGE;
    InitialGuess { params, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GaussParams {
        GaussParams {
            amplitude: 0.8,
            x0: 10.3,
            y0: 7.7,
            sigma_x: 4.0,
            sigma_y: 2.5,
            theta: 0.4,
            offset: 0.05,
        }
    }

    #[test]
    fn axis_aligned_matches_separable_form() {
        let g = GaussParams { theta: 0.0, ..sample() };
        let (x, y) = (12.0, 6.0);
        let direct =
            0.8 * (-(x - 10.3f64).powi(2) / (2.0 * 16.0)).exp() * (-(y - 7.7f64).powi(2) / (2.0 * 6.25)).exp() + 0.05;
        assert!((g.eval(x, y) - direct).abs() < 1e-14);
    }

    #[test]
    fn analytic_partials_match_differences() {
        let g = sample();
        for &(x, y) in &[(12.0, 6.0), (3.0, 9.0), (10.0, 8.0)] {
            let (v, grad) = g.eval_with_gradient(x, y);
            assert!((v - g.eval(x, y)).abs() < 1e-15);
            for k in 0..N_PARAMS {
                let h = 1e-6;
                let mut p = g.to_array();
                p[k] += h;
                let up = GaussParams::from_array(p).eval(x, y);
                p[k] -= 2.0 * h;
                let down = GaussParams::from_array(p).eval(x, y);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-8, "param {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn canonical_form_is_the_same_surface() {
        let g = GaussParams {
            sigma_x: 2.0,
            sigma_y: 5.0,
            theta: 1.3,
            ..sample()
        };
        let c = g.canonical();
        assert!(c.sigma_x >= c.sigma_y);
        assert!(c.theta > -FRAC_PI_2 && c.theta <= FRAC_PI_2);
        for &(x, y) in &[(12.0, 6.0), (3.0, 9.0), (14.5, 2.0)] {
            assert!((g.eval(x, y) - c.eval(x, y)).abs() < 1e-13);
        }
    }

    #[test]
    fn init_from_paper_formula() {
        // half the pixels at 0.9, half at 0.7: max 0.9, SD 0.1
        let values = (0..100).map(|i| if i % 2 == 0 { 0.9 } else { 0.7 }).collect();
        let map = ProbabilityMap::new(10, 10, values).unwrap();
        let g = init_guess(&map);
        assert!(!g.degenerate);
        assert!((g.params.amplitude - 0.7).abs() < 1e-6);
        assert!((g.params.sigma_x - 0.5).abs() < 1e-6);
        assert_eq!(g.params.sigma_x, g.params.sigma_y);
        assert_eq!((g.params.x0, g.params.y0), (0.0, 0.0));
        assert_eq!((g.params.theta, g.params.offset), (0.0, 0.0));
    }

    #[test]
    fn zero_map_is_degenerate() {
        let g = init_guess(&ProbabilityMap::zeros(8, 4));
        assert!(g.degenerate);
        assert_eq!(g.params.amplitude, 0.0);
        assert_eq!(g.params.sigma_x, 0.0);
    }

    #[test]
    fn near_uniform_low_map_is_degenerate() {
        let values = (0..64).map(|i| 0.09 + 0.01 * ((i * 37 % 64) as f32 / 63.0)).collect();
        let map = ProbabilityMap::new(8, 8, values).unwrap();
        assert!(init_guess(&map).degenerate);
    }
}
