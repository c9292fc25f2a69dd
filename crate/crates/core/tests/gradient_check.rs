//! Backpropagated gradients against central finite differences on a small network.

use rand::Rng;
use spi_core::bcnn::{l2_penalty, Architecture, Likelihood, NetworkConfig, NetworkWeights};
use spi_core::{seed, Image};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Gradients below `FLOOR · max(1, |loss|)` are compared absolutely rather than
/// relatively; the difference quotient carries rounding proportional to |loss|.
const FLOOR: f64 = 1e-6;
const MASK_SEED: u64 = 77;

fn total(w: &NetworkWeights<f64>, x: &Image, y: &Image) -> f64 {
    let mut scratch = w.zero_gradients();
    let nll = w.accumulate_gradients(x, y, true, MASK_SEED, 0.0, &mut scratch).unwrap();
    nll + w.config().l2_factor * l2_penalty(w.tensors())
}

fn check(likelihood: Likelihood) -> (usize, usize, f64) {
    let cfg = NetworkConfig {
        levels: 1,
        base_channels: 4,
        dropout_rate: 0.2,
        l2_factor: 1e-3,
        likelihood,
        ..Default::default()
    };
    let arch = Architecture::new(cfg, 8).unwrap();
    let mut w = NetworkWeights::<f64>::init(arch, 5).unwrap();
    let mut rng = seed::rng(seed::derive_seed(11, &[likelihood.name()]));
    for t in w.tensors_mut() {
        if t.name.ends_with(".bias") {
            t.data.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x = Image::square(8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let y = Image::square(8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();

    let mut grads = w.zero_gradients();
    w.accumulate_gradients(&x, &y, true, MASK_SEED, 1.0, &mut grads).unwrap();
    let two_l2 = 2.0 * cfg.l2_factor;
    let floor = FLOOR * total(&w, &x, &y).abs().max(1.0);

    let (mut checked, mut failed, mut worst) = (0, 0, 0.0f64);
    for ti in 0..w.tensors().len() {
        for i in 0..w.tensors()[ti].data.len() {
            let analytic = grads[ti][i] + two_l2 * w.tensors()[ti].data[i];
            let orig = w.tensors()[ti].data[i];
            w.tensors_mut()[ti].data[i] = orig + STEP;
            let plus = total(&w, &x, &y);
            w.tensors_mut()[ti].data[i] = orig - STEP;
            let minus = total(&w, &x, &y);
            w.tensors_mut()[ti].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
            if rel >= TOLERANCE {
                failed += 1;
                eprintln!("{likelihood:?} {}[{i}]: analytic {analytic:e} numeric {numeric:e}", w.tensors()[ti].name);
            }
        }
    }
    (checked, failed, worst)
}

#[test]
fn gradients_match_finite_differences_for_every_likelihood() {
    for likelihood in Likelihood::ALL {
        let (checked, failed, worst) = check(likelihood);
        eprintln!("{likelihood:?}: {checked} parameters, worst relative error {worst:.2e}");
        assert_eq!(failed, 0, "{likelihood:?}: {failed} of {checked} parameters off");
    }
}
