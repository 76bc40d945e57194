//! Analytic gradients against central finite differences in double precision.

use mtj_core::heatmap::make_soft_label;
use mtj_core::network::{
    backward_tensor, forward_tensor, init_weights, sample_loss, ModelWeights, NetworkConfig, Tensor,
};
use mtj_core::trainer::BceLoss;
use mtj_core::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        base_filters: 4,
        input_w: 32,
        input_h: 16,
        kernel_size: 3,
        rng_seed: 11,
    }
}

fn perturbed_weights(seed: u64) -> ModelWeights<f64> {
    // non-zero biases so that every bias path carries gradient
    let mut w = init_weights(&config()).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in w.tensors_mut() {
        if t.path.ends_with(".bias") {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    w
}

fn input(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(1, 16, 32, (0..512).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

fn target() -> Vec<f64> {
    make_soft_label(Some(Point::new(12.3, 7.6)), 32, 16)
        .unwrap()
        .values()
        .iter()
        .map(|&v| v as f64)
        .collect()
}

/// Per-pixel uniform targets: about half the pixels fall in each weight class.
fn random_target(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..512).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn backward_matches_central_differences() {
    let loss = BceLoss::unclipped(0.1);
    let weights = perturbed_weights(1);
    let x = input(2);
    let y = random_target(8);
    let (_, grads) = backward_tensor(&weights, &x, &y, &loss).unwrap();
    assert!(grads.same_structure(&weights));

    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let total = weights.parameter_count();
    let mut worst: f64 = 0.0;
    for probe in 0..50 {
        let (ti, off) = weights.locate(rng.gen_range(0..total)).unwrap();
        let mut wp = weights.clone();
        wp.tensors_mut()[ti].data[off] += h;
        let mut wm = weights.clone();
        wm.tensors_mut()[ti].data[off] -= h;
        let numeric = (sample_loss(&wp, &x, &y, &loss).unwrap() - sample_loss(&wm, &x, &y, &loss).unwrap()) / (2.0 * h);
        let analytic = grads.tensors()[ti].data[off];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(
            rel < 1e-5,
            "probe {probe} at {}[{off}]: analytic {analytic:e}, numeric {numeric:e}, rel {rel:e}",
            grads.tensors()[ti].path
        );
    }
    println!("max relative error over 50 probes: {worst:e}");
}

/// The training target is mostly background, so many gradients sit near the
/// finite-difference noise floor; compare with an absolute floor as well.
#[test]
fn soft_label_target_within_mixed_tolerance() {
    let loss = BceLoss::unclipped(0.1);
    let weights = perturbed_weights(9);
    let x = input(10);
    let y = target();
    let (_, grads) = backward_tensor(&weights, &x, &y, &loss).unwrap();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (ti, off) = weights.locate(rng.gen_range(0..weights.parameter_count())).unwrap();
        let mut wp = weights.clone();
        wp.tensors_mut()[ti].data[off] += h;
        let mut wm = weights.clone();
        wm.tensors_mut()[ti].data[off] -= h;
        let numeric = (sample_loss(&wp, &x, &y, &loss).unwrap() - sample_loss(&wm, &x, &y, &loss).unwrap()) / (2.0 * h);
        let analytic = grads.tensors()[ti].data[off];
        let tol = 1e-10 + 1e-5 * analytic.abs().max(numeric.abs());
        assert!(
            (analytic - numeric).abs() <= tol,
            "{}[{off}]: {analytic:e} vs {numeric:e}",
            grads.tensors()[ti].path
        );
    }
}

#[test]
fn stationary_when_target_equals_output() {
    let loss = BceLoss::unclipped(0.1);
    let weights = perturbed_weights(4);
    let x = input(5);
    let out = forward_tensor(&weights, &x).unwrap();
    let (_, grads) = backward_tensor(&weights, &x, &out.data, &loss).unwrap();
    assert!(grads.l2_norm() < 1e-8, "{}", grads.l2_norm());
}

#[test]
fn gradients_cover_every_tensor() {
    let loss = BceLoss::unclipped(0.1);
    let weights = perturbed_weights(6);
    let (_, grads) = backward_tensor(&weights, &input(7), &target(), &loss).unwrap();
    for t in grads.tensors() {
        assert!(t.data.iter().any(|&v| v != 0.0), "{} has an all-zero gradient", t.path);
    }
}
