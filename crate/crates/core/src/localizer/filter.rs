use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::locate::Prediction;
use crate::error::{Error, Result};
use crate::frame::Point;

/// Width of the border strip in which low-confidence predictions are dropped.
pub const BORDER_PADDING: f64 = 10.0;
pub const LOW_CONFIDENCE: f64 = 0.25;
/// Specialists farther than this many mean specialist SDs count as outliers.
pub const SPECIALIST_SIGMA_FACTOR: f64 = 20.0;
/// Outlying specialists needed to drop a frame.
pub const SPECIALIST_OUTLIER_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterCase {
    None,
    Border,
    LowConfidencePad,
    SpecialistInconsistent,
}

impl FilterCase {
    pub const ALL: [FilterCase; 4] = [
        FilterCase::None,
        FilterCase::Border,
        FilterCase::LowConfidencePad,
        FilterCase::SpecialistInconsistent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterCase::None => "none",
            FilterCase::Border => "border",
            FilterCase::LowConfidencePad => "low_confidence_pad",
            FilterCase::SpecialistInconsistent => "specialist_inconsistent",
        }
    }
}

impl fmt::Display for FilterCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterCase::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown filter case `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub kept: bool,
    pub case: FilterCase,
}

impl FilterVerdict {
    pub const KEPT: FilterVerdict = FilterVerdict {
        kept: true,
        case: FilterCase::None,
    };

    pub fn excluded(case: FilterCase) -> Self {
        Self {
            kept: case == FilterCase::None,
            case,
        }
    }
}

/// Drops predictions on the outermost pixel ring, and predictions inside the
/// 10-pixel border strip whose map maximum is below 0.25.
pub fn filter_prediction(pred: &Prediction, width: usize, height: usize) -> FilterVerdict {
    filter_position(&pred.position, pred.confidence, width as f64, height as f64)
}

/// [`filter_prediction`] on a bare position and map maximum.
pub fn filter_position(position: &Point, confidence: f64, width: f64, height: f64) -> FilterVerdict {
    let (x, y) = (position.x, position.y);
    let (right, bottom) = (width - 1.0, height - 1.0);
    if x <= 0.0 || y <= 0.0 || x >= right || y >= bottom {
        return FilterVerdict::excluded(FilterCase::Border);
    }
    let to_border = x.min(y).min(right - x).min(bottom - y);
    if to_border < BORDER_PADDING && confidence < LOW_CONFIDENCE {
        return FilterVerdict::excluded(FilterCase::LowConfidencePad);
    }
    FilterVerdict::KEPT
}

/// Drops a frame when at least three specialists lie more than
/// `20 * sigma_bar` from the reference label.
pub fn filter_specialist_frame(labels: &[Point], reference: &Point, sigma_bar: f64) -> Result<FilterVerdict> {
    if labels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "specialist filter needs at least 2 labels, got {}",
            labels.len()
        )));
    }
    if !(sigma_bar > 0.0 && sigma_bar.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma_bar must be positive, got {sigma_bar}"
        )));
    }
    let limit = SPECIALIST_SIGMA_FACTOR * sigma_bar;
    let outliers = labels.iter().filter(|p| p.distance(reference) > limit).count();
    Ok(if outliers >= SPECIALIST_OUTLIER_COUNT {
        FilterVerdict::excluded(FilterCase::SpecialistInconsistent)
    } else {
        FilterVerdict::KEPT
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localizer::GaussParams;

    fn pred(x: f64, y: f64, confidence: f64) -> Prediction {
        Prediction {
            position: Point::new(x, y),
            confidence,
            gauss: GaussParams {
                amplitude: 1.0,
                x0: x,
                y0: y,
                sigma_x: 1.0,
                sigma_y: 1.0,
                theta: 0.0,
                offset: 0.0,
            },
            fit_converged: true,
        }
    }

    #[test]
    fn prediction_cases() {
        assert_eq!(
            filter_prediction(&pred(0.0, 64.0, 0.99), 256, 128).case,
            FilterCase::Border
        );
        assert_eq!(
            filter_prediction(&pred(100.0, 127.0, 0.99), 256, 128).case,
            FilterCase::Border
        );
        let v = filter_prediction(&pred(5.0, 64.0, 0.20), 256, 128);
        assert_eq!(
            v,
            FilterVerdict {
                kept: false,
                case: FilterCase::LowConfidencePad
            }
        );
        assert_eq!(filter_prediction(&pred(5.0, 64.0, 0.90), 256, 128), FilterVerdict::KEPT);
        assert_eq!(
            filter_prediction(&pred(128.0, 64.0, 0.01), 256, 128),
            FilterVerdict::KEPT
        );
        assert_eq!(
            filter_prediction(&pred(246.0, 64.0, 0.2), 256, 128).case,
            FilterCase::LowConfidencePad
        );
        assert_eq!(
            filter_prediction(&pred(245.0, 64.0, 0.2), 256, 128),
            FilterVerdict::KEPT
        );
    }

    #[test]
    fn specialist_cases() {
        let r = Point::new(50.0, 50.0);
        let sigma = 0.5;
        assert_eq!(
            filter_specialist_frame(&[r; 4], &r, sigma).unwrap(),
            FilterVerdict::KEPT
        );
        let far = Point::new(50.0 + 21.0 * sigma, 50.0);
        let v = filter_specialist_frame(&[far, far, far, r], &r, sigma).unwrap();
        assert_eq!(v.case, FilterCase::SpecialistInconsistent);
        assert!(!v.kept);
        let very_far = Point::new(50.0, 50.0 + 100.0 * sigma);
        assert!(
            filter_specialist_frame(&[very_far, very_far, r, r], &r, sigma)
                .unwrap()
                .kept
        );
        assert!(filter_specialist_frame(&[r], &r, sigma).is_err());
        assert!(filter_specialist_frame(&[r, r], &r, 0.0).is_err());
    }

    #[test]
    fn case_names_round_trip() {
        for c in FilterCase::ALL {
            assert_eq!(c.as_str().parse::<FilterCase>().unwrap(), c);
        }
    }
}
