use mtj_core::dataio::{synth_phantom, Instrument, PhantomPreset};
use mtj_core::heatmap::{label_variance_for, make_soft_label_with_variance};
use mtj_core::imaging::normalize;
use mtj_core::localizer::locate;
use mtj_core::network::{forward, init_weights, NetworkConfig};
use mtj_core::trainer::{train_stage, CurriculumStage, TrainConfig, TrainingPair};

const W: usize = 64;
const H: usize = 32;

fn stage(n: usize, seed: u64) -> CurriculumStage {
    let dataset = (0..n as u64)
        .map(|i| {
            let (frame, label) = synth_phantom(&PhantomPreset::SyntheticA.params(seed + i, W, H)).unwrap();
            TrainingPair {
                frame,
                target: make_soft_label_with_variance(label.position, W, H, label_variance_for(W)).unwrap(),
            }
        })
        .collect();
    CurriculumStage {
        stage_id: 1,
        domains: vec![Instrument::SyntheticA],
        dataset,
    }
}

#[test]
fn small_model_learns_the_phantoms() {
    let network = NetworkConfig {
        depth: 2,
        base_filters: 8,
        input_w: W,
        input_h: H,
        kernel_size: 3,
        rng_seed: 4,
    };
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs_per_stage: 15,
        batch_size: 4,
        rng_seed: 4,
        ..TrainConfig::default()
    };
    let data = stage(200, 100);
    let (weights, log) = train_stage(init_weights(&network).unwrap(), &data, &config, false).unwrap();
    let (first, last) = (log[0].mean_loss, log.last().unwrap().mean_loss);
    assert!(last < 0.5 * first, "loss {first} -> {last}");

    // the trained model points near the junction on most training frames
    let close = data
        .dataset
        .iter()
        .filter(|p| {
            let map = forward(&weights, &normalize(&p.frame)).unwrap();
            let truth = mtj_core::heatmap::peak(&p.target).0;
            locate(&map).position.distance(&truth) <= 4.0
        })
        .count();
    assert!(
        close * 2 > data.dataset.len(),
        "{close} of {} within 4 px",
        data.dataset.len()
    );
}
