use serde::{Deserialize, Serialize};

use super::fit::{fit_gaussian, FitOptions};
use super::gauss::{init_guess, Bounds, GaussParams};
use crate::frame::Point;
use crate::heatmap::{peak, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub position: Point,
    /// Largest value of the probability map.
    pub confidence: f64,
    pub gauss: GaussParams,
    pub fit_converged: bool,
}

/// Point estimate from a probability map: the fitted Gaussian centre rounded
/// to the pixel grid, or the arg-max when the map is degenerate or the fit
/// does not converge.
pub fn locate(map: &ProbabilityMap) -> Prediction {
    locate_with(map, &FitOptions::default())
}

pub fn locate_with(map: &ProbabilityMap, options: &FitOptions) -> Prediction {
    let (argmax, max) = peak(map);
    let guess = init_guess(map);
    let fallback = Prediction {
        position: argmax,
        confidence: max as f64,
        gauss: guess.params,
        fit_converged: false,
    };
    if guess.degenerate {
        return fallback;
    }
    match fit_gaussian(map, &guess.params, &Bounds::for_map(map.width(), map.height()), options) {
        Ok(fit) if fit.converged => Prediction {
            position: Point::new(fit.params.x0, fit.params.y0).rounded(),
            confidence: max as f64,
            gauss: fit.params,
            fit_converged: true,
        },
        Ok(fit) => Prediction {
            gauss: fit.params,
            ..fallback
        },
        Err(_) => fallback,
    }
}
