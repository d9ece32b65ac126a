//! Trains on a planted three-graph instance and prints the evaluation.
//!
//! cargo run --release -p multiea --example planted -- [seed] [patience] [max_epochs]

use multiea::dataset::{split_labels, MultiKgDataset};
use multiea::encoder::encode;
use multiea::inference::SimilaritySet;
use multiea::metrics::{candidates, evaluate, CandidatePool, EvalOptions};
use multiea::synthetic::{planted, PlantedConfig};
use multiea::training::{prepare_graphs, train, TrainConfig};

fn main() -> multiea::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0) as u64;
    let inst = planted(&PlantedConfig { seed, ..PlantedConfig::default() })?;
    let config = TrainConfig {
        rng_seed: seed,
        patience: arg(2, 10),
        max_epochs: arg(3, 500),
        ..TrainConfig::default()
    };
    let (train_labels, test_labels) = split_labels(&inst.labels, config.train_ratio, seed)?;
    let dataset = MultiKgDataset::new(inst.kgs, train_labels, test_labels)?;
    let outcome = train(&dataset, &config)?;
    for r in &outcome.curve {
        println!(
            "epoch {:>4}  loss {:>12.4}  monitor {:.4}  {:.3}s",
            r.epoch,
            r.loss,
            r.monitor.unwrap_or(f64::NAN),
            r.step_seconds + r.monitor_seconds
        );
    }
    println!("best epoch {} after {:.1}s", outcome.best_epoch, outcome.total_seconds);
    let (_, graphs) = prepare_graphs(&dataset.kgs)?;
    let embeddings = encode(&graphs, &outcome.params)?;
    let counts: Vec<usize> = dataset.kgs.iter().map(|k| k.entity_count()).collect();
    let set = SimilaritySet::first_order(
        &embeddings,
        &candidates(&dataset.test_labels, &counts, CandidatePool::TestLabels),
    )?;
    let s = set.get(0, 2)?;
    let (r, c) = s.shape();
    let vals = s.values();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
    let colmeans: Vec<f64> = (0..c).map(|j| (0..r).map(|i| s.get(i, j)).sum::<f64>() / r as f64).collect();
    let cm = colmeans.iter().sum::<f64>() / c as f64;
    let csd = (colmeans.iter().map(|v| (v - cm) * (v - cm)).sum::<f64>() / c as f64).sqrt();
    println!("S(0,2): mean {mean:.4} sd {sd:.4} column-mean sd {csd:.5}");
    for gamma in [None, Some(0.2), Some(0.6), Some(0.9)] {
        let options = EvalOptions { gamma, ks: vec![1], ..EvalOptions::default() };
        let report = evaluate(&embeddings, &dataset.test_labels, &options)?;
        println!("gamma {gamma:?}  M-Hits@1 {:.4}", report.headline(1).unwrap());
    }
    Ok(())
}
