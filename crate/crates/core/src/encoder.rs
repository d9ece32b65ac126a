//! Shared relational graph attention encoder.
//!
//! Each layer aggregates, for every entity, its `(relation, neighbor)` tuples:
//! the neighbor is reflected by the relation's Householder matrix
//! `I − 2ggᵀ`, scored by an attention logit built from three vectors shared
//! across all graphs, softmax-normalized within the entity's tuple segment,
//! summed, and passed through ELU. Final rows are unit-normalized.

use std::sync::Arc;

use rand::Rng;

use crate::diffmath::{self, SegmentSpec, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NeighborIndex};

/// Tolerance on `‖g‖ − 1` accepted by [`relation_projection`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// One `(entity_count × d)` table per graph.
    pub entity_embeddings: Vec<Tensor>,
    /// One `(relation_count × d)` table per graph, self-relation included.
    pub relation_embeddings: Vec<Tensor>,
    pub attn_head: Tensor,
    pub attn_rel: Tensor,
    pub attn_tail: Tensor,
    pub layer_count: usize,
}

fn xavier_table(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = if rows + cols == 0 {
        0.0
    } else {
        (6.0 / (rows + cols) as f64).sqrt()
    };
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("xavier table shape")
}

impl ModelParams {
    /// Xavier-uniform initialization of every table and attention vector.
    /// Graphs must already carry their self-relation.
    pub fn xavier(
        kgs: &[KnowledgeGraph],
        dim: usize,
        layer_count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let entity_embeddings = kgs
            .iter()
            .map(|kg| xavier_table(rng, kg.entity_count(), dim))
            .collect();
        let relation_embeddings = kgs
            .iter()
            .map(|kg| xavier_table(rng, kg.relation_count(), dim))
            .collect();
        let vector = |rng: &mut _| {
            let t = xavier_table(rng, dim, 1);
            t.reshape(vec![dim]).expect("vector reshape")
        };
        let attn_head = vector(rng);
        let attn_rel = vector(rng);
        let attn_tail = vector(rng);
        Ok(Self {
            entity_embeddings,
            relation_embeddings,
            attn_head,
            attn_rel,
            attn_tail,
            layer_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.attn_head.len()
    }

    pub fn graph_count(&self) -> usize {
        self.entity_embeddings.len()
    }

    /// All trainable tensors in a fixed order: entity tables, relation
    /// tables, then the head/relation/tail attention vectors.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.entity_embeddings.iter().collect();
        out.extend(self.relation_embeddings.iter());
        out.extend([&self.attn_head, &self.attn_rel, &self.attn_tail]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.entity_embeddings.iter_mut().collect();
        out.extend(self.relation_embeddings.iter_mut());
        out.extend([&mut self.attn_head, &mut self.attn_rel, &mut self.attn_tail]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks table shapes against the graphs they will encode.
    pub fn check_against(&self, kgs: &[KnowledgeGraph]) -> Result<()> {
        let d = self.dim();
        if self.graph_count() != kgs.len() || self.relation_embeddings.len() != kgs.len() {
            return Err(Error::Shape(format!(
                "parameters hold {} graphs, dataset has {}",
                self.graph_count(),
                kgs.len()
            )));
        }
        for (m, kg) in kgs.iter().enumerate() {
            let (e, r) = (&self.entity_embeddings[m], &self.relation_embeddings[m]);
            if e.shape() != [kg.entity_count(), d] || r.shape() != [kg.relation_count(), d] {
                return Err(Error::Shape(format!(
                    "graph {m}: tables {:?}/{:?} do not match {} entities, {} relations, d = {d}",
                    e.shape(),
                    r.shape(),
                    kg.entity_count(),
                    kg.relation_count()
                )));
            }
        }
        Ok(())
    }
}

/// Neighbor-tuple topology of one graph in the layout the tape ops consume.
#[derive(Debug, Clone)]
pub struct EncoderGraph {
    pub segments: SegmentSpec,
    /// Owning entity of each tuple.
    pub owners: Arc<[usize]>,
    /// Neighbor entity of each tuple.
    pub neighbors: Arc<[usize]>,
    pub relations: Arc<[usize]>,
    pub entity_count: usize,
    pub relation_count: usize,
}

impl EncoderGraph {
    pub fn new(kg: &KnowledgeGraph, index: &NeighborIndex) -> Result<Self> {
        let segments = SegmentSpec::new(index.offsets().to_vec())?;
        segments.check_non_empty()?;
        Ok(Self {
            owners: segments.owners().to_vec().into(),
            segments,
            neighbors: index.neighbors().to_vec().into(),
            relations: index.relations().to_vec().into(),
            entity_count: kg.entity_count(),
            relation_count: kg.relation_count(),
        })
    }

    pub fn from_kg(kg: &KnowledgeGraph) -> Result<Self> {
        Self::new(kg, &kg.build_neighbor_index()?)
    }

    pub fn tuple_count(&self) -> usize {
        self.neighbors.len()
    }
}

/// Parameter handles registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub entities: Vec<Var>,
    pub relations: Vec<Var>,
    pub attn_head: Var,
    pub attn_rel: Var,
    pub attn_tail: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let entities = params
            .entity_embeddings
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let relations = params
            .relation_embeddings
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        Self {
            entities,
            relations,
            attn_head: tape.leaf(params.attn_head.clone()),
            attn_rel: tape.leaf(params.attn_rel.clone()),
            attn_tail: tape.leaf(params.attn_tail.clone()),
        }
    }

    /// Handles in the same order as [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.entities.clone();
        out.extend(self.relations.iter().copied());
        out.extend([self.attn_head, self.attn_rel, self.attn_tail]);
        out
    }
}

/// Records the encoder for graph `m` on `tape`; returns the unit-normalized
/// output table.
pub fn forward_graph(
    tape: &mut Tape,
    graph: &EncoderGraph,
    vars: &ParamVars,
    m: usize,
    layer_count: usize,
) -> Result<Var> {
    let g = tape.normalize_rows(vars.relations[m])?;
    let rel_score = tape.matvec(g, vars.attn_rel)?;
    let rel_score = tape.gather_rows(rel_score, graph.relations.clone())?;
    let mut h = vars.entities[m];
    for _ in 0..layer_count {
        let messages =
            tape.householder_messages(h, g, graph.neighbors.clone(), graph.relations.clone())?;
        let head_score = tape.matvec(h, vars.attn_head)?;
        let head_score = tape.gather_rows(head_score, graph.owners.clone())?;
        let tail_score = tape.matvec(messages, vars.attn_tail)?;
        let logits = tape.add(head_score, rel_score)?;
        let logits = tape.add(logits, tail_score)?;
        let beta = tape.elu(logits);
        let alpha = tape.segment_softmax(beta, &graph.segments)?;
        let aggregated = tape.segment_weighted_sum(alpha, messages, &graph.segments)?;
        h = tape.elu(aggregated);
    }
    tape.normalize_rows(h)
}

/// Records the encoder for every graph.
pub fn forward(
    tape: &mut Tape,
    graphs: &[EncoderGraph],
    vars: &ParamVars,
    layer_count: usize,
) -> Result<Vec<Var>> {
    graphs
        .iter()
        .enumerate()
        .map(|(m, g)| forward_graph(tape, g, vars, m, layer_count))
        .collect()
}

/// Unit-norm entity embeddings for every graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEmbeddings {
    pub tables: Vec<Tensor>,
}

impl EncodedEmbeddings {
    pub fn graph_count(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, m: usize) -> &Tensor {
        &self.tables[m]
    }

    pub fn row(&self, m: usize, entity: usize) -> &[f64] {
        self.tables[m].row(entity)
    }
}

/// Runs the shared encoder over all graphs (no gradient bookkeeping kept).
pub fn encode(graphs: &[EncoderGraph], params: &ModelParams) -> Result<EncodedEmbeddings> {
    let tables = graphs
        .iter()
        .enumerate()
        .map(|(m, graph)| {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, params);
            let out = forward_graph(&mut tape, graph, &vars, m, params.layer_count)?;
            Ok(tape.value(out).clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedEmbeddings { tables })
}

/// Householder matrix `I − 2ggᵀ` for a unit vector `g`.
pub fn relation_projection(g: &[f64]) -> Result<Tensor> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "relation vector must be unit norm, got {norm}"
        )));
    }
    let d = g.len();
    let mut w = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            w[i * d + j] = f64::from(u8::from(i == j)) - 2.0 * g[i] * g[j];
        }
    }
    Tensor::matrix(d, d, w)
}

fn apply(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention score `ELU(a_hᵀh_i + a_rᵀg_k + a_tᵀ(W_k h_j))` of one tuple.
pub fn attention_logit(
    h_i: &[f64],
    g_k: &[f64],
    h_j: &[f64],
    params: &ModelParams,
) -> Result<f64> {
    let w = relation_projection(g_k)?;
    let projected = apply(&w, h_j);
    let z = dot(params.attn_head.data(), h_i)
        + dot(params.attn_rel.data(), g_k)
        + dot(params.attn_tail.data(), &projected);
    Ok(diffmath::elu(&Tensor::scalar(z)).item())
}

/// One aggregation layer, computed entity by entity with explicit projection
/// matrices. `relations` must hold unit rows.
pub fn encode_layer(
    index: &NeighborIndex,
    h_in: &Tensor,
    relations: &Tensor,
    params: &ModelParams,
) -> Result<Tensor> {
    let d = h_in.row_width();
    if h_in.rows() != index.entity_count() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} entities",
            h_in.rows(),
            index.entity_count()
        )));
    }
    let projections = (0..relations.rows())
        .map(|k| relation_projection(relations.row(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(h_in.len());
    for i in 0..index.entity_count() {
        let tuples: Vec<(usize, usize)> = index.segment(i).collect();
        assert!(!tuples.is_empty(), "entity {i} has no neighbor tuples");
        let logits = tuples
            .iter()
            .map(|&(k, j)| attention_logit(h_in.row(i), relations.row(k), h_in.row(j), params))
            .collect::<Result<Vec<_>>>()?;
        let alpha = diffmath::segment_softmax(
            &Tensor::vector(logits),
            &SegmentSpec::from_lengths(&[tuples.len()]),
        )?;
        let mut acc = vec![0.0; d];
        for (&(k, j), &a) in tuples.iter().zip(alpha.data()) {
            let msg = apply(&projections[k], h_in.row(j));
            acc.iter_mut().zip(&msg).for_each(|(o, v)| *o += a * v);
        }
        out.extend(diffmath::elu(&Tensor::vector(acc)).into_data());
    }
    Tensor::matrix(index.entity_count(), d, out)
}
