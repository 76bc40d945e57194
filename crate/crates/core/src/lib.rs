//! Muscle-tendon junction localization in ultrasound frames: soft-label
//! heatmap supervision of an attention U-Net, Gaussian-fit localization,
//! error-case filtering and multi-annotator agreement statistics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod frame;
pub mod heatmap;
pub mod imaging;
pub mod localizer;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use frame::{Frame, Point};
pub use heatmap::ProbabilityMap;
