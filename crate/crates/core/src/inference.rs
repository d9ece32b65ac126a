//! Cross-graph similarity matrices and two-hop composition.
//!
//! First-order similarity between unit embeddings is `1 − ‖hᵢ − hⱼ‖ / 2`,
//! which lies in `[0, 1]`. The enhanced matrix for a pair of graphs adds, for
//! every third graph, the product of the two matrices routed through it.
//! Composed values may leave `[0, 1]`; only their ordering is used.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::encoder::EncodedEmbeddings;
use crate::error::{Error, Result};

/// Row norms further than this from 1 are rejected by [`similarity_matrix`].
pub const UNIT_ROW_TOLERANCE: f64 = 1e-6;

/// Tolerance on the sum of enhancement weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows.len() * cols.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}×{} similarity matrix",
                values.len(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Candidate entity indices labelling the rows.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Candidate entity indices labelling the columns.
    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols.len();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.shape();
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        Self {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            values,
        }
    }

    /// Matrix product; the inner candidate lists must be identical.
    pub fn compose(&self, other: &SimilarityMatrix) -> Result<SimilarityMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot compose {}×{} with {}×{}: inner candidate sets differ",
                self.rows.len(),
                self.cols.len(),
                other.rows.len(),
                other.cols.len()
            )));
        }
        let (n, k, m) = (self.rows.len(), self.cols.len(), other.cols.len());
        let mut values = vec![0.0; n * m];
        if m > 0 {
            values.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
                for p in 0..k {
                    let a = self.values[i * k + p];
                    let b = &other.values[p * m..(p + 1) * m];
                    out.iter_mut().zip(b).for_each(|(o, v)| *o += a * v);
                }
            });
        }
        Ok(SimilarityMatrix {
            rows: self.rows.clone(),
            cols: other.cols.clone(),
            values,
        })
    }
}

/// `S[i, j] = 1 − ‖h_{cᵢ} − h'_{c'ⱼ}‖ / 2` over the declared candidates.
pub fn similarity_matrix(
    left: &crate::diffmath::Tensor,
    right: &crate::diffmath::Tensor,
    left_candidates: &[usize],
    right_candidates: &[usize],
) -> Result<SimilarityMatrix> {
    if left.row_width() != right.row_width() {
        return Err(Error::Shape(format!(
            "embedding widths {} and {} differ",
            left.row_width(),
            right.row_width()
        )));
    }
    for (table, cands, side) in [(left, left_candidates, "left"), (right, right_candidates, "right")] {
        for &c in cands {
            if c >= table.rows() {
                return Err(Error::Shape(format!(
                    "{side} candidate {c} out of range for {} rows",
                    table.rows()
                )));
            }
            let norm = table.row(c).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_ROW_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "{side} embedding row {c} has norm {norm}, expected unit norm"
                )));
            }
        }
    }
    let m = right_candidates.len();
    let mut values = vec![0.0; left_candidates.len() * m];
    if m > 0 {
        values.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
            let a = left.row(left_candidates[i]);
            for (o, &c) in out.iter_mut().zip(right_candidates) {
                let d = a
                    .iter()
                    .zip(right.row(c))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                *o = 1.0 - d / 2.0;
            }
        });
    }
    SimilarityMatrix::new(left_candidates.to_vec(), right_candidates.to_vec(), values)
}

/// Non-negative term weights summing to one; the first weights the
/// first-order matrix, the rest weight the composed paths in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementWeights(Vec<f64>);

impl EnhancementWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("enhancement weights must not be empty"));
        }
        let mut problems = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                problems.push(format!("enhancement weight {i} = {w} is outside [0, 1]"));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            problems.push(format!("enhancement weights sum to {total}, expected 1"));
        }
        if problems.is_empty() {
            Ok(Self(weights))
        } else {
            Err(Error::Config(problems))
        }
    }

    /// First-order weight `gamma`, remainder split equally over `paths`.
    pub fn split(gamma: f64, paths: usize) -> Result<Self> {
        if paths == 0 {
            if (gamma - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::config(format!(
                    "with no composition paths the first-order weight must be 1, got {gamma}"
                )));
            }
            return Self::new(vec![1.0]);
        }
        let rest = (1.0 - gamma) / paths as f64;
        let mut w = vec![gamma];
        w.extend(std::iter::repeat_n(rest, paths));
        Self::new(w)
    }

    pub fn first_order(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `S̃ = γ₁·S + Σₜ γ_{t+1}·(Aₜ·Bₜ)`.
pub fn enhance(
    target: &SimilarityMatrix,
    paths: &[(&SimilarityMatrix, &SimilarityMatrix)],
    weights: &EnhancementWeights,
) -> Result<SimilarityMatrix> {
    if weights.len() != paths.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} paths; expected {}",
            weights.len(),
            paths.len(),
            paths.len() + 1
        )));
    }
    let w = weights.as_slice();
    let mut values: Vec<f64> = target.values.iter().map(|v| w[0] * v).collect();
    for (t, (a, b)) in paths.iter().enumerate() {
        if a.rows != target.rows || b.cols != target.cols {
            return Err(Error::Shape(format!(
                "path {t}: composed candidates do not match the target matrix"
            )));
        }
        let product = a
            .compose(b)
            .map_err(|e| Error::Shape(format!("path {t}: {e}")))?;
        values
            .iter_mut()
            .zip(&product.values)
            .for_each(|(o, p)| *o += w[t + 1] * p);
    }
    SimilarityMatrix::new(target.rows.clone(), target.cols.clone(), values)
}

/// 1-based rank of column `col` within `row`, sorting by similarity
/// descending and breaking ties by ascending candidate entity index.
pub fn rank_in_row(s: &SimilarityMatrix, row: usize, col: usize) -> usize {
    let values = s.row(row);
    let (v, e) = (values[col], s.cols[col]);
    1 + values
        .iter()
        .zip(&s.cols)
        .filter(|&(&x, &ent)| x > v || (x == v && ent < e))
        .count()
}

/// Top-`k` column entities of `row`, best first.
pub fn rank_candidates(s: &SimilarityMatrix, row: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if k > s.cols.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {} candidates",
            s.cols.len()
        )));
    }
    let values = s.row(row);
    let mut order: Vec<usize> = (0..s.cols.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(s.cols[a].cmp(&s.cols[b]))
    });
    Ok(order[..k].iter().map(|&c| s.cols[c]).collect())
}

/// Directional similarity matrices for every ordered pair of graphs.
#[derive(Debug, Clone, Default)]
pub struct SimilaritySet {
    graph_count: usize,
    matrices: BTreeMap<(usize, usize), SimilarityMatrix>,
}

impl SimilaritySet {
    pub fn new(graph_count: usize) -> Self {
        Self {
            graph_count,
            matrices: BTreeMap::new(),
        }
    }

    pub fn graph_count(&self) -> usize {
        self.graph_count
    }

    pub fn insert(&mut self, from: usize, to: usize, s: SimilarityMatrix) {
        self.matrices.insert((from, to), s);
    }

    pub fn get(&self, from: usize, to: usize) -> Result<&SimilarityMatrix> {
        self.matrices.get(&(from, to)).ok_or_else(|| {
            Error::InvalidArgument(format!("missing similarity matrix for graphs {from} -> {to}"))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &SimilarityMatrix)> {
        self.matrices.iter()
    }

    /// First-order matrices over per-graph candidate lists.
    pub fn first_order(embeddings: &EncodedEmbeddings, candidates: &[Vec<usize>]) -> Result<Self> {
        let m = embeddings.graph_count();
        if candidates.len() != m {
            return Err(Error::Shape(format!(
                "{} candidate lists for {m} graphs",
                candidates.len()
            )));
        }
        let mut set = Self::new(m);
        for a in 0..m {
            for b in a + 1..m {
                let s = similarity_matrix(
                    embeddings.table(a),
                    embeddings.table(b),
                    &candidates[a],
                    &candidates[b],
                )?;
                set.insert(b, a, s.transpose());
                set.insert(a, b, s);
            }
        }
        Ok(set)
    }

    /// Enhances every directional matrix with all two-hop paths through the
    /// remaining graphs (ascending intermediate index).
    pub fn enhanced(&self, weights: &EnhancementWeights) -> Result<Self> {
        let m = self.graph_count;
        let mut out = Self::new(m);
        for a in 0..m {
            for b in 0..m {
                if a == b {
                    continue;
                }
                let target = self.get(a, b)?;
                let mut paths = Vec::new();
                for c in (0..m).filter(|&c| c != a && c != b) {
                    paths.push((self.get(a, c)?, self.get(c, b)?));
                }
                let s = enhance(target, &paths, weights)
                    .map_err(|e| Error::Shape(format!("enhancing {a} -> {b}: {e}")))?;
                out.insert(a, b, s);
            }
        }
        Ok(out)
    }
}
