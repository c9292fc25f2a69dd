use spi_core::bcnn::{init_network, train, LrSchedule, NetworkConfig, TrainingConfig};
use spi_core::datasets::{parse_idx, preprocess};
use spi_core::Image;

fn digits(count: usize, side: usize) -> Vec<Image> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist/mnist-2000-images-idx3-ubyte");
    let mut stack = parse_idx(&std::fs::read(path).unwrap()).unwrap();
    stack.count = count;
    stack.data.truncate(count * stack.height * stack.width);
    preprocess(&stack, side).unwrap()
}

#[test]
fn small_set_is_overfit() {
    let targets = digits(8, 16);
    let inputs: Vec<Image> = targets
        .iter()
        .map(|t| Image::square(16, t.data().iter().map(|v| 0.5 * v + 0.25).collect()).unwrap())
        .collect();
    let cfg = NetworkConfig { levels: 2, base_channels: 8, ..Default::default() };
    let w = init_network(&cfg, 16, 1).unwrap();
    // 8 images in batches of 8: one step per epoch
    let tcfg = TrainingConfig { lr: LrSchedule::Constant(1e-3), batch_size: 8, epochs: 200, ..Default::default() };
    let out = train(w, &inputs, &targets, &[], &[], &tcfg).unwrap();
    let first = out.history.epochs.first().unwrap().train_loss;
    let last = out.history.epochs.last().unwrap().train_loss;
    assert!(last < 0.25 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let targets: Vec<Image> = (0..4).map(|i| Image::square(4, (0..16).map(|p| ((p + i) % 3) as f64 / 2.0).collect()).unwrap()).collect();
    let cfg = NetworkConfig { levels: 1, base_channels: 3, ..Default::default() };
    let tcfg = TrainingConfig { batch_size: 2, epochs: 3, shuffle_seed: 4, dropout_seed: 9, ..Default::default() };
    let run = || train(init_network(&cfg, 4, 7).unwrap(), &targets, &targets, &targets, &targets, &tcfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history, b.history);
}
