//! Margin-ranking training of the shared encoder.
//!
//! Each epoch is one full-batch step: encode every graph, score positives
//! and freshly sampled negatives with the chosen distance, take the hinge
//! loss and apply Adam. A slice of the training labels is kept out of the
//! loss and used to pick the best epoch.

mod adam;
mod distance;
mod negatives;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_labels, AlignmentLabel, MultiKgDataset};
use crate::diffmath::{Tape, Tensor};
use crate::encoder::{forward, EncodedEmbeddings, EncoderGraph, ModelParams, ParamVars};
use crate::error::{Error, Result};
use crate::inference::SimilaritySet;
use crate::kg::KnowledgeGraph;
use crate::metrics::{hits_at_k, m_hits_at_k};

pub use adam::Adam;
pub use distance::{
    distance_anchor, distance_each, distance_mean, margin_loss, record_distances, Strategy,
};
pub use negatives::{sample_negatives, NegativeBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub anchor_index: Option<usize>,
    pub margin: f64,
    pub negative_groups: usize,
    pub learning_rate: f64,
    pub dim: usize,
    pub layer_count: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub rng_seed: u64,
    /// Fraction of all labels used for training.
    pub train_ratio: f64,
    /// Fraction of the training labels held out to monitor early stopping.
    pub monitor_fraction: f64,
    /// Count each pair twice under the `each` strategy.
    pub ordered_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Each,
            anchor_index: None,
            margin: 1.0,
            negative_groups: 10,
            learning_rate: 0.01,
            dim: 256,
            layer_count: 2,
            patience: 10,
            max_epochs: 500,
            rng_seed: 0,
            train_ratio: 0.3,
            monitor_fraction: 0.1,
            ordered_pairs: false,
        }
    }
}

impl TrainConfig {
    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.margin > 0.0) {
            out.push(format!("margin must be positive, got {}", self.margin));
        }
        if self.negative_groups < 1 {
            out.push("negative_groups must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            out.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.dim < 1 {
            out.push("dim must be at least 1".into());
        }
        if self.layer_count < 1 {
            out.push("layer_count must be at least 1".into());
        }
        if self.patience < 1 {
            out.push("patience must be at least 1".into());
        }
        if self.max_epochs < 1 {
            out.push("max_epochs must be at least 1".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            out.push(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio));
        }
        if !(0.0..1.0).contains(&self.monitor_fraction) {
            out.push(format!(
                "monitor_fraction must lie in [0, 1), got {}",
                self.monitor_fraction
            ));
        }
        match (self.strategy, self.anchor_index) {
            (Strategy::Anchor, None) => out.push("strategy anchor requires anchor_index".into()),
            (s, Some(_)) if s != Strategy::Anchor => {
                out.push(format!("anchor_index is only valid with strategy anchor, not {s}"))
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Adds the self-relation where missing and builds the tuple layout.
pub fn prepare_graphs(kgs: &[KnowledgeGraph]) -> Result<(Vec<KnowledgeGraph>, Vec<EncoderGraph>)> {
    let augmented = kgs
        .iter()
        .map(|kg| {
            if kg.is_augmented() {
                Ok(kg.clone())
            } else {
                kg.clone().augment_self_relations()
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let graphs = augmented
        .iter()
        .map(EncoderGraph::from_kg)
        .collect::<Result<Vec<_>>>()?;
    Ok((augmented, graphs))
}

/// Loss on `positives` against `negatives` and its gradient with respect to
/// every tensor of `params`, in [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    graphs: &[EncoderGraph],
    params: &ModelParams,
    positives: &[AlignmentLabel],
    negatives: &NegativeBatch,
    config: &TrainConfig,
) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let outputs = forward(&mut tape, graphs, &vars, params.layer_count)?;
    let tuples: Vec<AlignmentLabel> = positives.iter().chain(&negatives.labels).cloned().collect();
    let distances = record_distances(
        &mut tape,
        &outputs,
        &tuples,
        config.strategy,
        config.anchor_index,
        config.ordered_pairs,
    )?;
    let loss = tape.margin_ranking(distances, positives.len(), negatives.per_positive, config.margin)?;
    let value = tape.value(loss).item();
    let tables = outputs.iter().map(|&o| tape.value(o).clone()).collect();
    if !value.is_finite() {
        return Ok((value, Vec::new(), tables));
    }
    let grads = tape.backward(loss)?;
    let all = vars.all();
    let tensors = params.tensors();
    let grads = all
        .iter()
        .zip(tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    Ok((value, grads, tables))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out score of the parameters that produced this epoch's loss.
    pub monitor: Option<f64>,
    pub step_seconds: f64,
    pub monitor_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub setup_seconds: f64,
    pub total_seconds: f64,
}

impl TrainOutcome {
    /// Mean wall-clock of the optimization step over the first `n` epochs.
    pub fn mean_step_seconds(&self, n: usize) -> f64 {
        let n = n.min(self.curve.len()).max(1);
        self.curve.iter().take(n).map(|r| r.step_seconds).sum::<f64>() / n as f64
    }
}

/// Held-out labels and the candidate pools they are ranked in.
struct Monitor {
    labels: Vec<AlignmentLabel>,
    candidates: Vec<Vec<usize>>,
}

impl Monitor {
    /// Candidates are the held-out entities plus every test entity, so the
    /// pool is about as hard as the final evaluation.
    fn new(labels: Vec<AlignmentLabel>, test: &[AlignmentLabel], graphs: usize) -> Self {
        let candidates = (0..graphs)
            .map(|m| {
                labels
                    .iter()
                    .chain(test)
                    .map(|l| l.entity(m))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        Self { labels, candidates }
    }

    fn score(&self, tables: Vec<Tensor>) -> Result<f64> {
        let embeddings = EncodedEmbeddings { tables };
        let set = SimilaritySet::first_order(&embeddings, &self.candidates)?;
        if embeddings.graph_count() > 2 {
            Ok(m_hits_at_k(&set, &self.labels, 1)?.value)
        } else {
            let pairs: Vec<_> = self.labels.iter().map(|l| (l.entity(0), l.entity(1))).collect();
            Ok(hits_at_k(set.get(0, 1)?, &pairs, 1)?.hits)
        }
    }
}

pub fn train(dataset: &MultiKgDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    config.validate()?;
    dataset.validate()?;
    if let Some(a) = config.anchor_index {
        if a >= dataset.graph_count() {
            return Err(Error::config(format!(
                "anchor_index {a} out of range for {} graphs",
                dataset.graph_count()
            )));
        }
    }
    if dataset.train_labels.is_empty() {
        return Err(Error::data("no training labels"));
    }
    let (kgs, graphs) = prepare_graphs(&dataset.kgs)?;
    let counts: Vec<usize> = kgs.iter().map(|kg| kg.entity_count()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut params = ModelParams::xavier(&kgs, config.dim, config.layer_count, &mut rng)?;

    let held = (config.monitor_fraction * dataset.train_labels.len() as f64 + 0.5).floor() as usize;
    let (loss_labels, monitor) = if held == 0 || held >= dataset.train_labels.len() {
        (dataset.train_labels.clone(), None)
    } else {
        let (monitor, rest) = split_labels(
            &dataset.train_labels,
            held as f64 / dataset.train_labels.len() as f64,
            config.rng_seed ^ 0x6d6f_6e69,
        )?;
        let monitor = Monitor::new(monitor, &dataset.test_labels, kgs.len());
        (rest, Some(monitor))
    };

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(config.learning_rate, &sizes);
    let setup_seconds = start.elapsed().as_secs_f64();

    let mut curve = Vec::new();
    // (monitor score, loss, epoch, parameters)
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let step_start = Instant::now();
        let negatives = NegativeBatch::sample(&loss_labels, &counts, config.negative_groups, &mut rng)?;
        let (loss, grads, tables) =
            match loss_and_gradients(&graphs, &params, &loss_labels, &negatives, config) {
                // overflowing rows cannot be normalised; the loss would be NaN
                Err(Error::ZeroNorm { norm, .. }) if !norm.is_finite() => {
                    return Err(Error::Divergence { epoch, loss: f64::NAN })
                }
                other => other?,
            };
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let snapshot = params.clone();
        adam.update(&mut params.tensors_mut(), &grads)?;
        if params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            // the next forward pass could not produce a finite loss
            return Err(Error::Divergence { epoch: epoch + 1, loss: f64::NAN });
        }
        let step_seconds = step_start.elapsed().as_secs_f64();

        let monitor_start = Instant::now();
        // higher is better; without held-out labels fall back to the loss
        let (score, monitored) = match &monitor {
            Some(m) => {
                let s = m.score(tables)?;
                (s, Some(s))
            }
            None => (-loss, None),
        };
        let monitor_seconds = monitor_start.elapsed().as_secs_f64();
        curve.push(EpochRecord {
            epoch,
            loss,
            monitor: monitored,
            step_seconds,
            monitor_seconds,
        });

        // ties on the monitor are broken by the training loss
        let improved = best
            .as_ref()
            .is_none_or(|(b, l, _, _)| score > *b || (score == *b && loss < *l));
        if improved {
            best = Some((score, loss, epoch, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, _, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        curve,
        best_epoch,
        stopped_early,
        setup_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
