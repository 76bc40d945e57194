//! Probability map to point estimate by bounded Gaussian fitting, and the
//! error-case filters applied before evaluation.

mod filter;
mod fit;
mod gauss;
mod locate;
mod predictions;

pub use filter::{
    filter_position, filter_prediction, filter_specialist_frame, FilterCase, FilterVerdict, BORDER_PADDING,
    LOW_CONFIDENCE, SPECIALIST_OUTLIER_COUNT, SPECIALIST_SIGMA_FACTOR,
};
pub use fit::{fit_gaussian, FitOptions, FitResult};
pub use gauss::{init_guess, Bounds, GaussParams, InitialGuess, MIN_DYNAMIC_RANGE, N_PARAMS};
pub use locate::{locate, locate_with, Prediction};
pub use predictions::{read_predictions, write_predictions, PredictionRow, PREDICTION_HEADER};
