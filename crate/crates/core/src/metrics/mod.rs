//! Multi-annotator reference labels, rater agreement and the evaluation
//! statistics suite with its figures.

mod agreement;
mod figures;
mod icc;
mod report;
pub mod special;
mod stats;

pub use agreement::{
    centroid, frame_agreement, group_by_frame, leave_one_out_distances, loo_specialist_deviation, mean,
    reference_label, reference_labels, sample_sd, spread, FrameAgreement, FrameKey, FrameLabels, SpecialistSpread,
};
pub use figures::{figures, write_figures, Figure};
pub use icc::{icc_a_k, mean_squares, Icc, MeanSquares};
pub use report::{
    evaluate, write_ledger, AxisAgreement, BlandAltmanAxes, EvaluateOptions, EvaluatedFrame, Evaluation,
    EvaluationReport, ExclusionCounts, LedgerEntry, MeanSd, SpecialistFold, LEDGER_HEADER, MIN_ICC_ROWS,
    MIN_SPECIALISTS,
};
pub use stats::{
    bland_altman, breakdown, default_tolerance_grid, error_stats, error_stats_from_distances, tolerance_curve,
    BlandAltman, Breakdown, ErrorStats, Grouping, TolerancePoint,
};
