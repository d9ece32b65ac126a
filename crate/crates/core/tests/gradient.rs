//! Full-model gradients against central finite differences.

mod common;

use multiea::diffmath::relative_error;
use multiea::training::{loss_and_gradients, Strategy, TrainConfig};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

fn check(strategy: Strategy, anchor: Option<usize>, seed: u64) -> f64 {
    let toy = common::toy(seed, 6);
    let config = TrainConfig {
        strategy,
        anchor_index: anchor,
        dim: 8,
        ..TrainConfig::default()
    };
    let (_, grads, _) =
        loss_and_gradients(&toy.graphs, &toy.params, &toy.labels, &toy.negatives, &config).unwrap();
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let sizes: Vec<usize> = toy.params.tensors().iter().map(|t| t.len()).collect();

    let loss_at = |params: &multiea::encoder::ModelParams| {
        loss_and_gradients(&toy.graphs, params, &toy.labels, &toy.negatives, &config)
            .unwrap()
            .0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut worst = 0.0f64;
    for flat_index in sample(&mut rng, flat.len(), 60) {
        let (mut tensor, mut offset) = (0, flat_index);
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        let mut probe = toy.params.clone();
        let orig = probe.tensors()[tensor].data()[offset];
        probe.tensors_mut()[tensor].data_mut()[offset] = orig + EPS;
        let plus = loss_at(&probe);
        probe.tensors_mut()[tensor].data_mut()[offset] = orig - EPS;
        let minus = loss_at(&probe);
        let numeric = (plus - minus) / (2.0 * EPS);
        let err = relative_error(flat[flat_index], numeric);
        assert!(err < TOLERANCE, "tensor {tensor}[{offset}]: analytic {} numeric {numeric}", flat[flat_index]);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn each_strategy_loss_gradients() {
    for seed in 0..3 {
        check(Strategy::Each, None, seed);
    }
}

#[test]
fn mean_and_anchor_loss_gradients() {
    check(Strategy::Mean, None, 7);
    check(Strategy::Anchor, Some(1), 8);
}
