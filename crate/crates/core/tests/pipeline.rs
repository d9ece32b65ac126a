mod common;

use std::collections::BTreeSet;

use multiea::dataset::{build_multi_kg, split_labels, MultiKgDataset};
use multiea::encoder::encode;
use multiea::kg::KnowledgeGraph;
use multiea::metrics::{evaluate, EvalOptions};
use multiea::synthetic::{planted, PlantedConfig};
use multiea::training::{prepare_graphs, train, TrainConfig};
use multiea::Error;

fn small_dataset(seed: u64) -> MultiKgDataset {
    let inst = planted(&PlantedConfig {
        graphs: 3,
        entities: 20,
        relations: 3,
        triples: 60,
        seed,
    })
    .unwrap();
    let (tr, te) = split_labels(&inst.labels, 0.3, seed).unwrap();
    MultiKgDataset::new(inst.kgs, tr, te).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        dim: 16,
        max_epochs: 30,
        patience: 30,
        monitor_fraction: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_the_loss() {
    let out = train(&small_dataset(1), &small_config()).unwrap();
    let first = out.curve.first().unwrap().loss;
    let last = out.curve.last().unwrap().loss;
    assert!(last < first, "loss went from {first} to {last}");
    assert_eq!(out.curve.len(), 30);
}

#[test]
fn fixed_seed_gives_identical_runs() {
    let ds = small_dataset(2);
    let config = TrainConfig {
        monitor_fraction: 0.2,
        patience: 5,
        ..small_config()
    };
    let a = train(&ds, &config).unwrap();
    let b = train(&ds, &config).unwrap();
    let losses = |o: &multiea::training::TrainOutcome| -> Vec<(f64, Option<f64>)> {
        o.curve.iter().map(|r| (r.loss, r.monitor)).collect()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn exploding_steps_abort_with_divergence() {
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small_config()
    };
    match train(&small_dataset(3), &config) {
        Err(Error::Divergence { epoch, loss }) => assert!(epoch <= 30 && !loss.is_finite()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let config = TrainConfig {
        monitor_fraction: 0.2,
        patience: 3,
        max_epochs: 200,
        ..small_config()
    };
    let ds = small_dataset(4);
    let out = train(&ds, &config).unwrap();
    let best = &out.curve[out.best_epoch];
    for r in &out.curve {
        let (m, b) = (r.monitor.unwrap(), best.monitor.unwrap());
        assert!(m < b || (m == b && r.loss >= best.loss) || r.epoch == out.best_epoch);
    }
    if out.stopped_early {
        assert_eq!(out.curve.len(), out.best_epoch + 1 + 3);
    }
    let (_, graphs) = prepare_graphs(&ds.kgs).unwrap();
    let options = EvalOptions {
        ks: vec![1, 5],
        ..EvalOptions::default()
    };
    let report = evaluate(&encode(&graphs, &out.params).unwrap(), &ds.test_labels, &options);
    report.unwrap();
}

#[test]
fn anchor_strategy_needs_valid_index() {
    let ds = small_dataset(5);
    let config = TrainConfig {
        strategy: multiea::training::Strategy::Anchor,
        anchor_index: Some(3),
        ..small_config()
    };
    assert!(matches!(train(&ds, &config), Err(Error::Config(_))));
}

#[test]
fn lower_threshold_builds_a_superset() {
    let inst = planted(&PlantedConfig {
        graphs: 3,
        entities: 80,
        relations: 4,
        triples: 400,
        seed: 6,
    })
    .unwrap();
    // name entities so the pair tables can refer to them
    let named: Vec<KnowledgeGraph> = inst
        .kgs
        .iter()
        .enumerate()
        .map(|(g, kg)| {
            let text: String = kg
                .triples()
                .iter()
                .map(|t| format!("g{g}e{}\tr{}\tg{g}e{}\n", t.head, t.relation, t.tail))
                .collect();
            KnowledgeGraph::load(text.as_bytes()).unwrap()
        })
        .collect();
    let tables: Vec<Vec<(String, String)>> = (1..3)
        .map(|g| {
            inst.labels
                .iter()
                .step_by(4)
                .map(|l| (format!("g0e{}", l.entity(0)), format!("g{g}e{}", l.entity(g))))
                .collect()
        })
        .collect();
    let loose = build_multi_kg(&named, &tables, 0).unwrap();
    let strict = build_multi_kg(&named, &tables, 15).unwrap();
    assert_eq!(loose.labels.len(), 20);
    for (l, s) in loose.subgraphs.iter().zip(&strict.subgraphs) {
        let names = |sub: &multiea::dataset::Subgraph| -> BTreeSet<String> {
            (0..sub.kg.entity_count()).map(|e| sub.kg.entity_label(e)).collect()
        };
        assert!(names(s).is_subset(&names(l)));
        let triples = |sub: &multiea::dataset::Subgraph| -> BTreeSet<(String, String, String)> {
            sub.kg
                .triples()
                .iter()
                .map(|t| (sub.kg.entity_label(t.head), sub.kg.relation_label(t.relation), sub.kg.entity_label(t.tail)))
                .collect()
        };
        assert!(triples(s).is_subset(&triples(l)));
    }
}
