use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::AlignmentLabel;
use crate::diffmath::{Tape, Var};
use crate::error::{Error, Result};

/// How the embeddings of one M-way label are pulled together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Toward their mean.
    Mean,
    /// Toward the entity of one fixed graph.
    Anchor,
    /// Toward each other, pair by pair.
    Each,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "anchor" => Ok(Self::Anchor),
            "each" => Ok(Self::Each),
            other => Err(Error::config(format!(
                "unknown strategy {other:?}; expected mean, anchor or each"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Anchor => "anchor",
            Self::Each => "each",
        })
    }
}

fn norm_between(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `Σₘ ‖hₘ − u‖` with `u` the mean of the embeddings.
pub fn distance_mean(embs: &[&[f64]]) -> f64 {
    if embs.is_empty() {
        return 0.0;
    }
    // running mean, exact when every embedding is the same
    let mut mean = embs[0].to_vec();
    for (k, e) in embs.iter().enumerate().skip(1) {
        let w = 1.0 / (k + 1) as f64;
        mean.iter_mut().zip(e.iter()).for_each(|(m, v)| *m += (v - *m) * w);
    }
    embs.iter().map(|e| norm_between(e, &mean)).sum()
}

/// `Σₘ ‖hₘ − h_anchor‖`.
pub fn distance_anchor(embs: &[&[f64]], anchor: usize) -> f64 {
    embs.iter().map(|e| norm_between(e, embs[anchor])).sum()
}

/// Sum over unordered pairs of `‖h_a − h_b‖`.
pub fn distance_each(embs: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    for a in 0..embs.len() {
        for b in a + 1..embs.len() {
            total += norm_between(embs[a], embs[b]);
        }
    }
    total
}

/// `Σ_p Σ_q max(d_p − d_{p,q} + margin, 0)`; negatives are grouped by
/// positive, `per_positive` each.
pub fn margin_loss(positive: &[f64], negative: &[f64], per_positive: usize, margin: f64) -> Result<f64> {
    if margin <= 0.0 {
        return Err(Error::config(format!("margin must be positive, got {margin}")));
    }
    if negative.len() != positive.len() * per_positive {
        return Err(Error::Shape(format!(
            "{} negatives for {} positives with {per_positive} each",
            negative.len(),
            positive.len()
        )));
    }
    let mut total = 0.0;
    for (p, &dp) in positive.iter().enumerate() {
        for &dn in &negative[p * per_positive..(p + 1) * per_positive] {
            total += (dp - dn + margin).max(0.0);
        }
    }
    Ok(total)
}

/// Records one distance per tuple on `tape`, reading each graph's entity
/// from its output table.
pub fn record_distances(
    tape: &mut Tape,
    outputs: &[Var],
    tuples: &[AlignmentLabel],
    strategy: Strategy,
    anchor: Option<usize>,
    ordered_pairs: bool,
) -> Result<Var> {
    let m = outputs.len();
    if m < 2 {
        return Err(Error::data(format!("need at least 2 graphs, got {m}")));
    }
    let gathered = (0..m)
        .map(|k| {
            let idx: Arc<[usize]> = tuples.iter().map(|t| t.entity(k)).collect();
            tape.gather_rows(outputs[k], idx)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::new();
    match strategy {
        Strategy::Mean => {
            let mut sum = gathered[0];
            for &g in &gathered[1..] {
                sum = tape.add(sum, g)?;
            }
            let mean = tape.scale(sum, 1.0 / m as f64);
            for &g in &gathered {
                terms.push(tape.row_distance(g, mean)?);
            }
        }
        Strategy::Anchor => {
            let a = anchor.ok_or_else(|| Error::config("anchor strategy needs an anchor index"))?;
            if a >= m {
                return Err(Error::config(format!("anchor index {a} out of range for {m} graphs")));
            }
            for (k, &g) in gathered.iter().enumerate() {
                if k != a {
                    terms.push(tape.row_distance(g, gathered[a])?);
                }
            }
        }
        Strategy::Each => {
            for a in 0..m {
                for b in a + 1..m {
                    terms.push(tape.row_distance(gathered[a], gathered[b])?);
                }
            }
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    if ordered_pairs && strategy == Strategy::Each {
        total = tape.scale(total, 2.0);
    }
    Ok(total)
}
