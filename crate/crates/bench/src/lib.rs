//! Shared fixtures for the pipeline benchmarks.

use mtj_core::dataio::{
    synth_phantom, DatasetManifest, Instrument, LabelRecord, Movement, Muscle, PhantomPreset, SubjectGroup, VideoEntry,
};
use mtj_core::heatmap::{make_soft_label, ProbabilityMap};
use mtj_core::imaging::CropSpec;
use mtj_core::localizer::{FilterCase, PredictionRow};
use mtj_core::network::{init_weights, ModelWeights, NetworkConfig};
use mtj_core::{Frame, Point};

pub fn network(depth: usize, base_filters: usize, input_w: usize, input_h: usize) -> NetworkConfig {
    NetworkConfig {
        depth,
        base_filters,
        input_w,
        input_h,
        kernel_size: 3,
        rng_seed: 0,
    }
}

pub fn weights(config: &NetworkConfig) -> ModelWeights<f32> {
    init_weights(config).expect("valid benchmark config")
}

/// Phantom frame and its soft label.
pub fn sample(width: usize, height: usize, seed: u64) -> (Frame, ProbabilityMap) {
    let params = PhantomPreset::SyntheticA.params(seed, width, height);
    let (frame, label) = synth_phantom(&params).expect("valid phantom");
    let target = make_soft_label(label.position, width, height).expect("label inside frame");
    (frame, target)
}

/// Soft label with a little structured clutter, as a network might emit.
pub fn noisy_map(width: usize, height: usize, at: Point) -> ProbabilityMap {
    let clean = make_soft_label(Some(at), width, height).expect("inside frame");
    let values = clean
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| 0.8 * v + 0.05 * (((i * 7919) % 101) as f32 / 100.0))
        .collect();
    ProbabilityMap::new(width, height, values).expect("values in range")
}

/// `n` predicted frames of one video, each with four specialists scattered
/// a few pixels around the junction and a model guess nearby.
pub fn evaluation_inputs(n: usize) -> (Vec<PredictionRow>, Vec<LabelRecord>, DatasetManifest) {
    let manifest = DatasetManifest::new(vec![VideoEntry {
        video_id: "bench".into(),
        instrument: Instrument::SyntheticA,
        movement: Movement::MVC,
        muscle: Muscle::MG,
        subject_group: SubjectGroup::Healthy,
        frame_dir: "bench".into(),
        pixel_spacing_mm: 0.15,
        crop: CropSpec::full(256, 128),
        stride: 1,
    }]);
    // deterministic pseudo-random offsets in [-2, 2)
    let jitter = |k: usize| ((k * 2_654_435_761) % 1000) as f64 / 250.0 - 2.0;
    let mut predictions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(4 * n);
    for i in 0..n {
        let (x, y) = (40.0 + (i % 170) as f64, 30.0 + (i % 60) as f64);
        for s in 0..4 {
            let k = 8 * i + 2 * s;
            labels.push(LabelRecord {
                video_id: "bench".into(),
                frame_idx: i,
                annotator_id: format!("S{}", s + 1),
                position: Some(Point::new(x + jitter(k), y + jitter(k + 1))),
            });
        }
        predictions.push(PredictionRow {
            video_id: "bench".into(),
            frame_idx: i,
            x_px: x + 1.5 * jitter(8 * i + 7),
            y_px: y + jitter(8 * i + 6),
            confidence: 0.9,
            fit_converged: true,
            filter_case: FilterCase::None,
        });
    }
    (predictions, labels, manifest)
}
