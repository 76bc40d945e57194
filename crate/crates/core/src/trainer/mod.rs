//! Weighted cross-entropy, Adam, the epoch loop and the sequential
//! multi-domain curriculum.

mod adam;
mod loss;
mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use loss::{weighted_bce, weighted_bce_with, BceLoss, DEFAULT_CLIP};
pub use train::{
    check_nested, checkpoint_path, train_curriculum, train_stage, train_stage_observed, write_training_log,
    CurriculumOutcome, CurriculumStage, EpochRecord, TrainConfig, TrainingPair, TRAINING_LOG_HEADER,
};
