use rand::Rng;

use crate::dataset::AlignmentLabel;
use crate::error::{Error, Result};

/// Corrupted labels for a list of positives: `groups` groups per positive,
/// each group holding one label per graph that keeps only that graph's
/// entity. Laid out positive-major, so positive `p` owns
/// `labels[p·per_positive .. (p+1)·per_positive]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBatch {
    pub per_positive: usize,
    pub labels: Vec<AlignmentLabel>,
}

impl NegativeBatch {
    pub fn sample(
        positives: &[AlignmentLabel],
        entity_counts: &[usize],
        groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(positives.len() * groups * entity_counts.len());
        for label in positives {
            labels.extend(sample_negatives(label, entity_counts, groups, rng)?);
        }
        Ok(Self {
            per_positive: groups * entity_counts.len(),
            labels,
        })
    }

    pub fn for_positive(&self, p: usize) -> &[AlignmentLabel] {
        &self.labels[p * self.per_positive..(p + 1) * self.per_positive]
    }
}

fn other_entity(rng: &mut impl Rng, count: usize, original: usize) -> usize {
    let pick = rng.gen_range(0..count - 1);
    if pick >= original {
        pick + 1
    } else {
        pick
    }
}

pub fn sample_negatives(
    label: &AlignmentLabel,
    entity_counts: &[usize],
    groups: usize,
    rng: &mut impl Rng,
) -> Result<Vec<AlignmentLabel>> {
    let m = entity_counts.len();
    if label.arity() != m {
        return Err(Error::Shape(format!(
            "label has {} entities for {m} graphs",
            label.arity()
        )));
    }
    if let Some(g) = entity_counts.iter().position(|&n| n < 2) {
        return Err(Error::data(format!(
            "graph {g} has fewer than 2 entities; cannot corrupt labels"
        )));
    }
    let mut out = Vec::with_capacity(groups * m);
    for _ in 0..groups {
        for keep in 0..m {
            let entities = (0..m)
                .map(|k| {
                    if k == keep {
                        label.entity(k)
                    } else {
                        other_entity(rng, entity_counts[k], label.entity(k))
                    }
                })
                .collect();
            out.push(AlignmentLabel::new(entities));
        }
    }
    Ok(out)
}
