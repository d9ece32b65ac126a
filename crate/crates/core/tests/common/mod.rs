#![allow(dead_code)]

use multiea::dataset::AlignmentLabel;
use multiea::encoder::{EncoderGraph, ModelParams};
use multiea::kg::KnowledgeGraph;
use multiea::synthetic::{planted, PlantedConfig};
use multiea::training::{prepare_graphs, NegativeBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Toy {
    pub kgs: Vec<KnowledgeGraph>,
    pub graphs: Vec<EncoderGraph>,
    pub labels: Vec<AlignmentLabel>,
    pub params: ModelParams,
    pub negatives: NegativeBatch,
}

/// Three planted 12-entity graphs, d = 8, two layers.
pub fn toy(seed: u64, positives: usize) -> Toy {
    let inst = planted(&PlantedConfig {
        graphs: 3,
        entities: 12,
        relations: 3,
        triples: 30,
        seed,
    })
    .unwrap();
    let (kgs, graphs) = prepare_graphs(&inst.kgs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::xavier(&kgs, 8, 2, &mut rng).unwrap();
    let labels: Vec<_> = inst.labels.into_iter().take(positives).collect();
    let counts: Vec<usize> = kgs.iter().map(|k| k.entity_count()).collect();
    let negatives = NegativeBatch::sample(&labels, &counts, 2, &mut rng).unwrap();
    Toy {
        kgs,
        graphs,
        labels,
        params,
        negatives,
    }
}
