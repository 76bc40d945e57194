use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::loss::{BceLoss, DEFAULT_CLIP};
use crate::dataio::Instrument;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::heatmap::ProbabilityMap;
use crate::imaging::{apply_augment, normalize, sample_augment};
use crate::network::{accumulate_gradients, frame_tensor, init_weights, save_weights, ModelWeights, NetworkConfig};
use crate::rng::{keyed, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub zero_class_weight: f64,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub adam_epsilon: f64,
    pub loss_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            zero_class_weight: 0.1,
            epochs_per_stage: 100,
            batch_size: 8,
            rng_seed: 0,
            adam_epsilon: 1e-12,
            loss_clip: DEFAULT_CLIP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.zero_class_weight > 0.0 && self.zero_class_weight <= 1.0) {
            return bad("zero_class_weight must lie in (0, 1]");
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return bad("adam_epsilon must be positive");
        }
        if !(0.0..0.5).contains(&self.loss_clip) {
            return bad("loss_clip must lie in [0, 0.5)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn loss(&self) -> BceLoss {
        BceLoss {
            zero_class_weight: self.zero_class_weight,
            clip: self.loss_clip,
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// A resized (not yet normalized) frame and its soft-label target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub frame: Frame,
    pub target: ProbabilityMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumStage {
    pub stage_id: usize,
    pub domains: Vec<Instrument>,
    pub dataset: Vec<TrainingPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    /// Counted from 1.
    pub epoch: usize,
    pub mean_loss: f64,
}

fn prepare(pair: &TrainingPair, augment_seed: Option<u64>) -> Result<(Frame, ProbabilityMap)> {
    match augment_seed {
        Some(seed) => {
            let (f, m) = apply_augment(&pair.frame, &pair.target, &sample_augment(seed))?;
            Ok((normalize(&f), m))
        }
        None => Ok((normalize(&pair.frame), pair.target.clone())),
    }
}

/// Trains on one stage for `epochs_per_stage` passes, reporting each epoch
/// to `observer`. Samples are visited in an order drawn from the
/// `(seed, stage, epoch)` shuffle stream; when `augment` is set each sample
/// gets a fresh augmentation every epoch.
pub fn train_stage_observed(
    weights: ModelWeights<f32>,
    stage: &CurriculumStage,
    config: &TrainConfig,
    augment: bool,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelWeights<f32>, Vec<EpochRecord>)> {
    config.validate()?;
    if stage.dataset.is_empty() {
        return Err(Error::InvalidInput(format!(
            "stage {} has no training pairs",
            stage.stage_id
        )));
    }
    let net = weights.config().clone();
    for (i, pair) in stage.dataset.iter().enumerate() {
        if pair.frame.dims() != (net.input_w, net.input_h) || pair.target.dims() != pair.frame.dims() {
            return Err(Error::dims(
                format!("{}x{} training pair", net.input_w, net.input_h),
                format!(
                    "pair {i}: frame {:?}, target {:?}",
                    pair.frame.dims(),
                    pair.target.dims()
                ),
            ));
        }
    }
    let loss = config.loss();
    let adam = config.adam();
    let mut weights = weights;
    let mut state = AdamState::new(&weights);
    let mut grads = weights.zeros_like();
    let mut log = Vec::with_capacity(config.epochs_per_stage);
    let stage_key = stage.stage_id as u64;
    let mut order: Vec<usize> = (0..stage.dataset.len()).collect();
    for epoch in 0..config.epochs_per_stage {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.rng_seed, "shuffle", &[stage_key, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0;
            for &i in batch {
                let aug = augment.then(|| keyed(config.rng_seed, "augment", &[stage_key, epoch as u64, i as u64]));
                let (frame, target) = prepare(&stage.dataset[i], aug)?;
                batch_loss += accumulate_gradients(
                    &weights,
                    &frame_tensor(&frame),
                    target.values(),
                    &loss,
                    scale,
                    &mut grads,
                )
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {}, batch {b}", epoch + 1)),
                    other => other,
                })?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {}, batch {b}", epoch + 1)));
            }
            epoch_loss += batch_loss;
            adam_step(&mut weights, &grads, &mut state, &adam).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {}, batch {b}", epoch + 1)),
                other => other,
            })?;
        }
        let record = EpochRecord {
            stage: stage.stage_id,
            epoch: epoch + 1,
            mean_loss: epoch_loss / stage.dataset.len() as f64,
        };
        observer(&record);
        log.push(record);
    }
    Ok((weights, log))
}

pub fn train_stage(
    weights: ModelWeights<f32>,
    stage: &CurriculumStage,
    config: &TrainConfig,
    augment: bool,
) -> Result<(ModelWeights<f32>, Vec<EpochRecord>)> {
    train_stage_observed(weights, stage, config, augment, &mut |_| {})
}

/// Checks that every stage's domain set contains the previous one.
pub fn check_nested(stages: &[CurriculumStage]) -> Result<()> {
    for pair in stages.windows(2) {
        if let Some(missing) = pair[0].domains.iter().find(|d| !pair[1].domains.contains(d)) {
            return Err(Error::InvalidInput(format!(
                "stage {} drops domain {missing} used by stage {}",
                pair[1].stage_id, pair[0].stage_id
            )));
        }
    }
    Ok(())
}

pub fn checkpoint_path(dir: &Path, stage_id: usize) -> PathBuf {
    dir.join(format!("stage_{stage_id}.mtjw"))
}

#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    /// Model after each stage, in stage order.
    pub models: Vec<ModelWeights<f32>>,
    pub log: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs the stages in order, each starting from the previous stage's
/// weights, and writes `stage_<id>.mtjw` after every completed stage.
pub fn train_curriculum(
    network: &NetworkConfig,
    stages: &[CurriculumStage],
    config: &TrainConfig,
    augment: bool,
    checkpoint_dir: Option<&Path>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<CurriculumOutcome> {
    check_nested(stages)?;
    let mut weights = init_weights(network)?;
    let mut outcome = CurriculumOutcome {
        models: Vec::new(),
        log: Vec::new(),
        checkpoints: Vec::new(),
    };
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for stage in stages {
        let (w, log) = train_stage_observed(weights, stage, config, augment, observer)?;
        if let Some(dir) = checkpoint_dir {
            let path = checkpoint_path(dir, stage.stage_id);
            save_weights(&path, &w)?;
            outcome.checkpoints.push(path);
        }
        outcome.log.extend(log);
        outcome.models.push(w.clone());
        weights = w;
    }
    Ok(outcome)
}

pub const TRAINING_LOG_HEADER: &str = "stage,epoch,mean_loss";

pub fn write_training_log<W: Write>(mut w: W, log: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRAINING_LOG_HEADER}")?;
    for r in log {
        writeln!(w, "{},{},{:?}", r.stage, r.epoch, r.mean_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Point;
    use crate::heatmap::make_soft_label;

    fn tiny() -> (NetworkConfig, CurriculumStage) {
        let net = NetworkConfig {
            depth: 1,
            base_filters: 2,
            input_w: 16,
            input_h: 8,
            kernel_size: 3,
            rng_seed: 9,
        };
        let dataset = (0..5)
            .map(|i| TrainingPair {
                frame: Frame::from_fn(16, 8, |x, y| ((x * (i + 1) + y) % 5) as f32 / 5.0),
                target: make_soft_label(Some(Point::new(3.0 + i as f64, 4.0)), 16, 8).unwrap(),
            })
            .collect();
        (
            net,
            CurriculumStage {
                stage_id: 1,
                domains: vec![Instrument::SyntheticA],
                dataset,
            },
        )
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (net, stage) = tiny();
        let w = init_weights(&net).unwrap();
        let cfg = TrainConfig {
            epochs_per_stage: 0,
            ..Default::default()
        };
        let (out, log) = train_stage(w.clone(), &stage, &cfg, true).unwrap();
        assert_eq!(out, w);
        assert!(log.is_empty());
    }

    #[test]
    fn log_length_and_determinism() {
        let (net, stage) = tiny();
        let cfg = TrainConfig {
            epochs_per_stage: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let run = || train_stage(init_weights(&net).unwrap(), &stage, &cfg, true).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la.len(), 3);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_ne!(a, init_weights(&net).unwrap());
    }

    #[test]
    fn empty_stage_rejected() {
        let (net, mut stage) = tiny();
        stage.dataset.clear();
        assert!(train_stage(init_weights(&net).unwrap(), &stage, &TrainConfig::default(), false).is_err());
    }

    #[test]
    fn nesting_enforced() {
        let (_, s) = tiny();
        let mut s2 = s.clone();
        s2.stage_id = 2;
        s2.domains = vec![Instrument::SyntheticB];
        let err = check_nested(&[s.clone(), s2.clone()]).unwrap_err();
        assert!(err.to_string().contains("SyntheticA"), "{err}");
        s2.domains = vec![Instrument::SyntheticA, Instrument::SyntheticB];
        assert!(check_nested(&[s, s2]).is_ok());
    }

    #[test]
    fn log_csv() {
        let mut buf = Vec::new();
        write_training_log(
            &mut buf,
            &[EpochRecord {
                stage: 1,
                epoch: 1,
                mean_loss: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "stage,epoch,mean_loss\n1,1,0.25\n");
    }
}
