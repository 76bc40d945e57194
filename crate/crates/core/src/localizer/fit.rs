use nalgebra::{SMatrix, SVector};

use super::gauss::{Bounds, GaussParams, N_PARAMS};
use crate::error::{Error, Result};
use crate::heatmap::ProbabilityMap;

type Mat = SMatrix<f64, N_PARAMS, N_PARAMS>;
type Vector = SVector<f64, N_PARAMS>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Bound-scaled gradient tolerance (infinity norm).
    pub gradient_tol: f64,
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-8,
            step_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    /// Canonical form (`sigma_x >= sigma_y`).
    pub params: GaussParams,
    pub converged: bool,
    pub iterations: usize,
    /// Half the sum of squared residuals at the start and at the end.
    pub initial_cost: f64,
    pub cost: f64,
}

/// Residuals `model - map` over every pixel.
struct Problem<'a> {
    map: &'a ProbabilityMap,
}

impl Problem<'_> {
    fn cost(&self, p: &GaussParams) -> Result<f64> {
        let (w, h) = self.map.dims();
        let values = self.map.values();
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let r = p.eval(x as f64, y as f64) - values[y * w + x] as f64;
                total += r * r;
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("Gaussian fit residual at {p:?}")));
        }
        Ok(0.5 * total)
    }

    /// Cost, gradient `J^T r` and Gauss-Newton matrix `J^T J`.
    fn linearize(&self, p: &GaussParams) -> Result<(f64, Vector, Mat)> {
        let (w, h) = self.map.dims();
        let values = self.map.values();
        let mut cost = 0.0;
        let mut g = Vector::zeros();
        let mut jtj = Mat::zeros();
        for y in 0..h {
            for x in 0..w {
                let (m, d) = p.eval_with_gradient(x as f64, y as f64);
                let r = m - values[y * w + x] as f64;
                cost += r * r;
                for i in 0..N_PARAMS {
                    g[i] += d[i] * r;
                    for j in 0..=i {
                        jtj[(i, j)] += d[i] * d[j];
                    }
                }
            }
        }
        for i in 0..N_PARAMS {
            for j in 0..i {
                jtj[(j, i)] = jtj[(i, j)];
            }
        }
        if !cost.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Gaussian fit residual at {p:?}")));
        }
        Ok((0.5 * cost, g, jtj))
    }
}

/// Fraction of each box width kept clear of the bounds.
const INTERIOR: f64 = 1e-10;

fn strictly_inside(x: f64, lo: f64, hi: f64) -> f64 {
    let margin = INTERIOR * (hi - lo);
    x.clamp(lo + margin, hi - margin)
}

/// Mirrors a trial point back into the box, then keeps it strictly inside.
fn reflect_into(x: f64, lo: f64, hi: f64) -> f64 {
    let r = if x > hi {
        hi - (x - hi)
    } else if x < lo {
        lo + (lo - x)
    } else {
        x
    };
    strictly_inside(r, lo, hi)
}

/// Index of `theta`; the model has period pi in it, so its box is a chart
/// of a circle rather than a wall.
const THETA: usize = 5;

/// Wraps a trial angle back into the box by whole periods.
fn wrap_into(x: f64, lo: f64, hi: f64) -> f64 {
    let period = hi - lo;
    strictly_inside(lo + (x - lo).rem_euclid(period), lo, hi)
}

/// Coleman-Li scaling: distance to the bound the negative gradient points at.
fn bound_scale(x: &[f64; N_PARAMS], g: &Vector, b: &Bounds) -> Vector {
    Vector::from_fn(|i, _| {
        if i == THETA {
            1.0
        } else if g[i] < 0.0 {
            b.upper[i] - x[i]
        } else if g[i] > 0.0 {
            x[i] - b.lower[i]
        } else {
            1.0
        }
    })
}

fn solve(a: Mat, rhs: &Vector) -> Option<Vector> {
    a.cholesky().map(|c| c.solve(rhs)).or_else(|| a.lu().solve(rhs))
}

/// Bounded least-squares fit of [`GaussParams`] to `map`.
///
/// A Levenberg-Marquardt trust region: each trial step solves
/// `(J^T J + lambda diag(J^T J)) s = -J^T r`; steps leaving the box are
/// reflected at the violated bound and every iterate stays strictly inside
/// it. A `theta` box spanning exactly one period is wrapped instead. The radius follows the gain ratio of actual to predicted reduction.
/// Converged when the bound-scaled gradient or a step falls below
/// tolerance.
pub fn fit_gaussian(
    map: &ProbabilityMap,
    init: &GaussParams,
    bounds: &Bounds,
    options: &FitOptions,
) -> Result<FitResult> {
    if !bounds.is_valid() {
        return Err(Error::InvalidInput("invalid fit bounds".into()));
    }
    if !init.is_finite() || !(init.amplitude > 0.0) || !(init.sigma_x > 0.0) || !(init.sigma_y > 0.0) {
        return Err(Error::Degenerate(format!("Gaussian fit initial guess {init:?}")));
    }
    let problem = Problem { map };
    let theta_periodic = (bounds.upper[THETA] - bounds.lower[THETA] - std::f64::consts::PI).abs() < 1e-12;
    let mut x = init.to_array();
    for (v, (&lo, &hi)) in x.iter_mut().zip(bounds.lower.iter().zip(&bounds.upper)) {
        *v = strictly_inside(*v, lo, hi);
    }
    let mut current = GaussParams::from_array(x);
    let (mut cost, mut g, mut jtj) = problem.linearize(&current)?;
    let initial_cost = cost;
    let mut lambda = 1e-3 * (0..N_PARAMS).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-12);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        let scale = bound_scale(&x, &g, bounds);
        if g.component_mul(&scale).amax() < options.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut damped = jtj;
        for i in 0..N_PARAMS {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = solve(damped, &(-g)) else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };
        let mut trial = x;
        for i in 0..N_PARAMS {
            trial[i] = reflect_into(x[i] + step[i], bounds.lower[i], bounds.upper[i]);
        }
        if theta_periodic {
            trial[THETA] = wrap_into(x[THETA] + step[THETA], bounds.lower[THETA], bounds.upper[THETA]);
        }
        // the angle moved by `step` even when wrapping relabelled it
        let s = Vector::from_fn(|i, _| {
            if i == THETA && theta_periodic {
                step[i]
            } else {
                trial[i] - x[i]
            }
        });
        let predicted = -(g.dot(&s) + 0.5 * s.dot(&(jtj * s)));
        let candidate = GaussParams::from_array(trial);
        let trial_cost = problem.cost(&candidate)?;
        let actual = cost - trial_cost;
        if actual > 0.0 && predicted > 0.0 {
            let rho = actual / predicted;
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            x = trial;
            current = candidate;
            (cost, g, jtj) = problem.linearize(&current)?;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
        if s.norm() < options.step_tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params: current.canonical(),
        converged,
        iterations,
        initial_cost,
        cost,
    })
}
