//! Pair-wise Hits@K and the all-counterparts M-Hits@K.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::AlignmentLabel;
use crate::encoder::EncodedEmbeddings;
use crate::error::{Error, Result};
use crate::inference::{EnhancementWeights, SimilarityMatrix, SimilaritySet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairHits {
    pub left: f64,
    pub right: f64,
    pub hits: f64,
}

fn positions(ids: &[usize]) -> HashMap<usize, usize> {
    ids.iter().enumerate().map(|(p, &e)| (e, p)).collect()
}

fn lookup(map: &HashMap<usize, usize>, entity: usize, what: &str) -> Result<usize> {
    map.get(&entity)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} entity {entity} is not a candidate")))
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if k > pool {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the candidate pool of {pool}"
        )));
    }
    Ok(())
}

/// Rank of row `target` within column `col`, same tie rule as rows.
fn rank_in_col(s: &SimilarityMatrix, target: usize, col: usize) -> usize {
    let rows = s.rows();
    let v = s.get(target, col);
    let e = rows[target];
    1 + (0..rows.len())
        .filter(|&i| {
            let x = s.get(i, col);
            x > v || (x == v && rows[i] < e)
        })
        .count()
}

/// `pairs` are `(left entity, right entity)`; left entities index rows of
/// `s_lr`, right entities its columns.
pub fn hits_at_k(s_lr: &SimilarityMatrix, pairs: &[(usize, usize)], k: usize) -> Result<PairHits> {
    check_k(k, s_lr.cols().len())?;
    check_k(k, s_lr.rows().len())?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no labels to evaluate".into()));
    }
    let (rows, cols) = (positions(s_lr.rows()), positions(s_lr.cols()));
    let mut left = 0usize;
    let mut right = 0usize;
    for &(l, r) in pairs {
        let (i, j) = (lookup(&rows, l, "left")?, lookup(&cols, r, "right")?);
        if crate::inference::rank_in_row(s_lr, i, j) <= k {
            left += 1;
        }
        if rank_in_col(s_lr, i, j) <= k {
            right += 1;
        }
    }
    let n = pairs.len() as f64;
    let (left, right) = (left as f64 / n, right as f64 / n);
    Ok(PairHits {
        left,
        right,
        hits: (left + right) / 2.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHits {
    /// Fraction of labels whose target-graph entity ranks every
    /// counterpart in top-K, one entry per target graph.
    pub per_target: Vec<f64>,
    pub value: f64,
}

/// For each target graph `m`, counts labels whose entity in `m` ranks all of
/// its counterparts (via the `m → m'` matrices) in the top `k`.
pub fn m_hits_at_k(set: &SimilaritySet, labels: &[AlignmentLabel], k: usize) -> Result<MultiHits> {
    let m = set.graph_count();
    if m <= 2 {
        return Err(Error::InvalidArgument(format!(
            "M-Hits needs more than 2 graphs, got {m}; use pair-wise Hits@K"
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to evaluate".into()));
    }
    if let Some(l) = labels.iter().find(|l| l.arity() != m) {
        return Err(Error::Shape(format!("label {:?} does not have {m} entities", l.0)));
    }
    let mut per_target = Vec::with_capacity(m);
    for target in 0..m {
        let mut directions = Vec::new();
        for other in (0..m).filter(|&o| o != target) {
            let s = set.get(target, other)?;
            check_k(k, s.cols().len())?;
            directions.push((other, s, positions(s.rows()), positions(s.cols())));
        }
        let hits = labels
            .par_iter()
            .map(|label| -> Result<bool> {
                for (other, s, rows, cols) in &directions {
                    let i = lookup(rows, label.entity(target), "query")?;
                    let j = lookup(cols, label.entity(*other), "counterpart")?;
                    if crate::inference::rank_in_row(s, i, j) > k {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .collect::<Result<Vec<bool>>>()?;
        per_target.push(hits.iter().filter(|&&h| h).count() as f64 / labels.len() as f64);
    }
    let value = per_target.iter().sum::<f64>() / m as f64;
    Ok(MultiHits { per_target, value })
}

/// Which entities populate the similarity matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidatePool {
    #[default]
    TestLabels,
    AllEntities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// First-order weight; `None` disables enhancement.
    pub gamma: Option<f64>,
    pub pool: CandidatePool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 10, 20],
            gamma: Some(0.2),
            pool: CandidatePool::TestLabels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label_count: usize,
    pub graph_count: usize,
    /// `(K, result)`; empty for two graphs.
    pub multi: Vec<(usize, MultiHits)>,
    /// `((left graph, right graph), K, result)` for every unordered pair.
    pub pairs: Vec<((usize, usize), usize, PairHits)>,
    pub seconds: f64,
}

impl EvalReport {
    /// M-Hits@K, or pair-wise Hits@K when only two graphs are aligned.
    pub fn headline(&self, k: usize) -> Option<f64> {
        if self.graph_count > 2 {
            self.multi.iter().find(|(kk, _)| *kk == k).map(|(_, h)| h.value)
        } else {
            self.pairs.iter().find(|(_, kk, _)| *kk == k).map(|(_, _, h)| h.hits)
        }
    }

    /// `metric<TAB>K<TAB>value` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tK\tvalue\n");
        for (k, h) in &self.multi {
            writeln!(out, "M-Hits\t{k}\t{:.6}", h.value).unwrap();
            for (m, v) in h.per_target.iter().enumerate() {
                writeln!(out, "m_Hits[{m}]\t{k}\t{v:.6}").unwrap();
            }
        }
        for ((a, b), k, h) in &self.pairs {
            writeln!(out, "Hits[{a}-{b}]\t{k}\t{:.6}", h.hits).unwrap();
            writeln!(out, "l_Hits[{a}-{b}]\t{k}\t{:.6}", h.left).unwrap();
            writeln!(out, "r_Hits[{a}-{b}]\t{k}\t{:.6}", h.right).unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} labels across {} graphs, evaluated in {:.2}s\n",
            self.label_count, self.graph_count, self.seconds
        );
        for (k, h) in &self.multi {
            writeln!(out, "  M-Hits@{k:<3} {:.4}", h.value).unwrap();
        }
        for ((a, b), k, h) in &self.pairs {
            writeln!(out, "  Hits@{k:<3} {a}-{b}  {:.4}  (l {:.4}, r {:.4})", h.hits, h.left, h.right).unwrap();
        }
        out
    }
}

/// Candidate lists for each graph under `pool`.
pub fn candidates(
    labels: &[AlignmentLabel],
    entity_counts: &[usize],
    pool: CandidatePool,
) -> Vec<Vec<usize>> {
    match pool {
        CandidatePool::TestLabels => (0..entity_counts.len())
            .map(|m| labels.iter().map(|l| l.entity(m)).collect())
            .collect(),
        CandidatePool::AllEntities => entity_counts.iter().map(|&n| (0..n).collect()).collect(),
    }
}

/// Similarity set used for evaluation, enhanced when `gamma` is given and
/// there are intermediate graphs to route through.
pub fn evaluation_similarities(
    embeddings: &EncodedEmbeddings,
    labels: &[AlignmentLabel],
    gamma: Option<f64>,
    pool: CandidatePool,
) -> Result<SimilaritySet> {
    let counts: Vec<usize> = embeddings.tables.iter().map(|t| t.rows()).collect();
    let first = SimilaritySet::first_order(embeddings, &candidates(labels, &counts, pool))?;
    match gamma {
        Some(g) if counts.len() > 2 => {
            let weights = EnhancementWeights::split(g, counts.len() - 2)?;
            first.enhanced(&weights)
        }
        _ => Ok(first),
    }
}

pub fn evaluate(
    embeddings: &EncodedEmbeddings,
    labels: &[AlignmentLabel],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let start = Instant::now();
    let set = evaluation_similarities(embeddings, labels, options.gamma, options.pool)?;
    let m = set.graph_count();
    let mut multi = Vec::new();
    if m > 2 {
        for &k in &options.ks {
            multi.push((k, m_hits_at_k(&set, labels, k)?));
        }
    }
    let mut pairs = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let s = set.get(a, b)?;
            let pair_labels: Vec<(usize, usize)> =
                labels.iter().map(|l| (l.entity(a), l.entity(b))).collect();
            for &k in &options.ks {
                pairs.push(((a, b), k, hits_at_k(s, &pair_labels, k)?));
            }
        }
    }
    Ok(EvalReport {
        label_count: labels.len(),
        graph_count: m,
        multi,
        pairs,
        seconds: start.elapsed().as_secs_f64(),
    })
}
