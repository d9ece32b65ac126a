use std::sync::Arc;

use rayon::prelude::*;

use super::kernels::{self, for_each_row};
use super::{SegmentSpec, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Elu(Var),
    NormalizeRows {
        input: Var,
        norms: Vec<f64>,
    },
    GatherRows {
        input: Var,
        indices: Arc<[usize]>,
    },
    HouseholderMessages {
        entities: Var,
        relations: Var,
        sources: Arc<[usize]>,
        relation_ids: Arc<[usize]>,
    },
    SegmentSoftmax {
        input: Var,
        segments: SegmentSpec,
    },
    SegmentWeightedSum {
        weights: Var,
        rows: Var,
        segments: SegmentSpec,
    },
    RowDistance(Var, Var),
    MarginRanking {
        distances: Var,
        positives: usize,
        per_positive: usize,
        margin: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. A tape is built fresh for every evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients, one optional buffer per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(msg()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        require(sa == sb, || format!("{what}: shapes {sa:?} and {sb:?} differ"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, factor))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        require(x.shape().len() == 1 && x.shape() == y.shape(), || {
            format!("dot: expects equal vectors, got {:?} and {:?}", x.shape(), y.shape())
        })?;
        let s = kernels::dot(x.data(), y.data());
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// `(n × d) · (d) → (n)`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (a, x) = (self.value(m), self.value(v));
        require(
            a.shape().len() == 2 && x.shape().len() == 1 && a.shape()[1] == x.len(),
            || format!("matvec: cannot apply {:?} to {:?}", a.shape(), x.shape()),
        )?;
        let data = a.data().chunks(x.len().max(1)).map(|row| kernels::dot(row, x.data()));
        let data: Vec<f64> = if x.is_empty() {
            vec![0.0; a.rows()]
        } else {
            data.collect()
        };
        Ok(self.push(Tensor::vector(data), Op::MatVec(m, v)))
    }

    /// `(n × k) · (k × m) → (n × m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        require(
            x.shape().len() == 2 && y.shape().len() == 2 && x.shape()[1] == y.shape()[0],
            || format!("matmul: cannot multiply {:?} by {:?}", x.shape(), y.shape()),
        )?;
        let value = matmul_kernel(x, y);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = super::elu(self.value(a));
        self.push(value, Op::Elu(a))
    }

    /// Unit-normalizes every row (or the whole vector for 1-D input).
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let width = if x.shape().len() <= 1 { x.len() } else { x.row_width() };
        let (data, norms) = kernels::normalize_rows(x.data(), width)?;
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::NormalizeRows { input: a, norms }))
    }

    /// Selects rows (elements, for vectors) by index.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let rows = x.rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!(
                "gather: row {bad} out of range for {rows} rows"
            )));
        }
        let width = x.row_width();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices.iter() {
            data.extend_from_slice(&x.data()[i * width..(i + 1) * width]);
        }
        let mut shape = x.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = indices.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::GatherRows { input: a, indices }))
    }

    /// For every tuple `t`, reflects entity row `sources[t]` through the
    /// hyperplane orthogonal to relation row `relation_ids[t]`:
    /// `x − 2 g (gᵀ x)`. Relation rows are expected to be unit vectors.
    pub fn householder_messages(
        &mut self,
        entities: Var,
        relations: Var,
        sources: Arc<[usize]>,
        relation_ids: Arc<[usize]>,
    ) -> Result<Var> {
        let (h, g) = (self.value(entities), self.value(relations));
        require(
            h.shape().len() == 2 && g.shape().len() == 2 && h.shape()[1] == g.shape()[1],
            || format!("householder: entity table {:?} vs relation table {:?}", h.shape(), g.shape()),
        )?;
        require(sources.len() == relation_ids.len(), || {
            "householder: source and relation index lists differ in length".into()
        })?;
        require(
            sources.iter().all(|&s| s < h.rows()) && relation_ids.iter().all(|&r| r < g.rows()),
            || "householder: index out of range".into(),
        )?;
        let d = h.shape()[1];
        let mut out = vec![0.0; sources.len() * d];
        for_each_row(&mut out, d, |t, row| {
            let x = h.row(sources[t]);
            let gk = g.row(relation_ids[t]);
            let c = 2.0 * kernels::dot(gk, x);
            for ((o, &xi), &gi) in row.iter_mut().zip(x).zip(gk) {
                *o = xi - c * gi;
            }
        });
        let value = Tensor::matrix(sources.len(), d, out)?;
        Ok(self.push(
            value,
            Op::HouseholderMessages {
                entities,
                relations,
                sources,
                relation_ids,
            },
        ))
    }

    pub fn segment_softmax(&mut self, a: Var, segments: &SegmentSpec) -> Result<Var> {
        let x = self.value(a);
        require(x.shape().len() == 1, || "segment softmax expects a vector".into())?;
        let value = super::segment_softmax(x, segments)?;
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                input: a,
                segments: segments.clone(),
            },
        ))
    }

    /// `out[s] = Σ_{t ∈ segment s} weights[t] · rows[t]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        rows: Var,
        segments: &SegmentSpec,
    ) -> Result<Var> {
        let (w, x) = (self.value(weights), self.value(rows));
        require(w.shape().len() == 1 && x.shape().len() == 2 && w.len() == x.rows(), || {
            format!("segment sum: weights {:?} vs rows {:?}", w.shape(), x.shape())
        })?;
        segments.check_covers(w.len())?;
        let d = x.row_width();
        let mut out = vec![0.0; segments.segment_count() * d];
        for_each_row(&mut out, d, |s, row| {
            for t in segments.range(s) {
                let wt = w.data()[t];
                for (o, &v) in row.iter_mut().zip(x.row(t)) {
                    *o += wt * v;
                }
            }
        });
        let value = Tensor::matrix(segments.segment_count(), d, out)?;
        Ok(self.push(
            value,
            Op::SegmentWeightedSum {
                weights,
                rows,
                segments: segments.clone(),
            },
        ))
    }

    /// Euclidean distance between matching rows of two `(n × d)` tables.
    pub fn row_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row distance")?;
        let (x, y) = (self.value(a), self.value(b));
        require(x.shape().len() == 2, || "row distance expects matrices".into())?;
        let data = (0..x.rows())
            .map(|i| kernels::distance(x.row(i), y.row(i)))
            .collect();
        Ok(self.push(Tensor::vector(data), Op::RowDistance(a, b)))
    }

    /// Hinge ranking loss. `distances` holds `positives` positive distances
    /// followed by `per_positive` negative distances for each positive, in
    /// positive order. Returns `Σ_p Σ_q max(d_p − d_{p,q} + margin, 0)`.
    pub fn margin_ranking(
        &mut self,
        distances: Var,
        positives: usize,
        per_positive: usize,
        margin: f64,
    ) -> Result<Var> {
        let d = self.value(distances);
        require(
            d.shape().len() == 1 && d.len() == positives * (1 + per_positive),
            || {
                format!(
                    "margin loss: expected {} distances, got shape {:?}",
                    positives * (1 + per_positive),
                    d.shape()
                )
            },
        )?;
        let data = d.data();
        let mut total = 0.0;
        for p in 0..positives {
            let base = positives + p * per_positive;
            for q in 0..per_positive {
                total += (data[p] - data[base + q] + margin).max(0.0);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::MarginRanking {
                distances,
                positives,
                per_positive,
                margin,
            },
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        require(out.len() == 1, || {
            format!("backward needs a scalar output, got shape {:?}", out.shape())
        })?;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, self, *a, |buf| add_into(buf, g));
                accumulate(grads, self, *b, |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                accumulate(grads, self, *a, |buf| add_into(buf, g));
                accumulate(grads, self, *b, |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o -= v)
                });
            }
            Op::Scale(a, f) => {
                accumulate(grads, self, *a, |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o += f * v)
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                accumulate(grads, self, *a, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                accumulate(grads, self, *a, |buf| {
                    buf.iter_mut().zip(y).for_each(|(o, v)| *o += s * v)
                });
                accumulate(grads, self, *b, |buf| {
                    buf.iter_mut().zip(x).for_each(|(o, v)| *o += s * v)
                });
            }
            Op::MatVec(m, v) => {
                let (a, x) = (self.value(*m), self.value(*v));
                let d = x.len();
                accumulate(grads, self, *m, |buf| {
                    for_each_row(buf, d, |i, row| {
                        row.iter_mut().zip(x.data()).for_each(|(o, xv)| *o += g[i] * xv)
                    })
                });
                accumulate(grads, self, *v, |buf| {
                    for (i, row) in a.data().chunks(d.max(1)).enumerate() {
                        buf.iter_mut().zip(row).for_each(|(o, av)| *o += g[i] * av);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                accumulate(grads, self, *a, |buf| {
                    for_each_row(buf, k, |i, row| {
                        let gi = &g[i * m..(i + 1) * m];
                        for (p, o) in row.iter_mut().enumerate() {
                            *o += kernels::dot(gi, y.row(p));
                        }
                    })
                });
                accumulate(grads, self, *b, |buf| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for (p, &xv) in x.row(i).iter().enumerate() {
                            let row = &mut buf[p * m..(p + 1) * m];
                            row.iter_mut().zip(gi).for_each(|(o, gv)| *o += xv * gv);
                        }
                    }
                });
            }
            Op::Elu(a) => {
                let x = self.value(*a).data();
                accumulate(grads, self, *a, |buf| {
                    for ((o, &xv), &gv) in buf.iter_mut().zip(x).zip(g) {
                        *o += gv * kernels::elu_derivative(xv);
                    }
                });
            }
            Op::NormalizeRows { input, norms } => {
                let u = &node.value;
                let width = if u.shape().len() <= 1 { u.len() } else { u.row_width() };
                accumulate(grads, self, *input, |buf| {
                    for_each_row(buf, width, |i, row| {
                        let ui = &u.data()[i * width..(i + 1) * width];
                        let gi = &g[i * width..(i + 1) * width];
                        let proj = kernels::dot(ui, gi);
                        for ((o, &uv), &gv) in row.iter_mut().zip(ui).zip(gi) {
                            *o += (gv - uv * proj) / norms[i];
                        }
                    })
                });
            }
            Op::GatherRows { input, indices } => {
                let width = self.value(*input).row_width();
                accumulate(grads, self, *input, |buf| {
                    for (t, &i) in indices.iter().enumerate() {
                        let src = &g[t * width..(t + 1) * width];
                        let dst = &mut buf[i * width..(i + 1) * width];
                        add_into(dst, src);
                    }
                });
            }
            Op::HouseholderMessages {
                entities,
                relations,
                sources,
                relation_ids,
            } => {
                let (h, rel) = (self.value(*entities), self.value(*relations));
                let d = h.row_width();
                let tuples = sources.len();
                // Per-tuple partials first, then an ordered scatter.
                let mut dx = vec![0.0; tuples * d];
                let mut dg = vec![0.0; tuples * d];
                let row_grads = |t: usize, dx_row: &mut [f64], dg_row: &mut [f64]| {
                    let x = h.row(sources[t]);
                    let gk = rel.row(relation_ids[t]);
                    let dy = &g[t * d..(t + 1) * d];
                    let c = kernels::dot(gk, x);
                    let s = kernels::dot(gk, dy);
                    for i in 0..d {
                        dx_row[i] = dy[i] - 2.0 * s * gk[i];
                        dg_row[i] = -2.0 * (c * dy[i] + s * x[i]);
                    }
                };
                if tuples * d >= 1 << 14 {
                    dx.par_chunks_mut(d)
                        .zip(dg.par_chunks_mut(d))
                        .enumerate()
                        .for_each(|(t, (a, b))| row_grads(t, a, b));
                } else if d > 0 {
                    dx.chunks_mut(d)
                        .zip(dg.chunks_mut(d))
                        .enumerate()
                        .for_each(|(t, (a, b))| row_grads(t, a, b));
                }
                accumulate(grads, self, *entities, |buf| {
                    for (t, &s) in sources.iter().enumerate() {
                        add_into(&mut buf[s * d..(s + 1) * d], &dx[t * d..(t + 1) * d]);
                    }
                });
                accumulate(grads, self, *relations, |buf| {
                    for (t, &r) in relation_ids.iter().enumerate() {
                        add_into(&mut buf[r * d..(r + 1) * d], &dg[t * d..(t + 1) * d]);
                    }
                });
            }
            Op::SegmentSoftmax { input, segments } => {
                let y = node.value.data();
                accumulate(grads, self, *input, |buf| {
                    for s in 0..segments.segment_count() {
                        let r = segments.range(s);
                        let inner = kernels::dot(&y[r.clone()], &g[r.clone()]);
                        for t in r {
                            buf[t] += y[t] * (g[t] - inner);
                        }
                    }
                });
            }
            Op::SegmentWeightedSum {
                weights,
                rows,
                segments,
            } => {
                let (w, x) = (self.value(*weights), self.value(*rows));
                let d = x.row_width();
                let owners = segments.owners();
                accumulate(grads, self, *weights, |buf| {
                    for (t, o) in buf.iter_mut().enumerate() {
                        let s = owners[t];
                        *o += kernels::dot(&g[s * d..(s + 1) * d], x.row(t));
                    }
                });
                accumulate(grads, self, *rows, |buf| {
                    for_each_row(buf, d, |t, row| {
                        let s = owners[t];
                        let wt = w.data()[t];
                        for (o, &gv) in row.iter_mut().zip(&g[s * d..(s + 1) * d]) {
                            *o += wt * gv;
                        }
                    })
                });
            }
            Op::RowDistance(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let dist = node.value.data();
                let d = x.row_width();
                let mut dx = vec![0.0; x.len()];
                for_each_row(&mut dx, d, |i, row| {
                    if dist[i] > 0.0 {
                        let f = g[i] / dist[i];
                        for ((o, &p), &q) in row.iter_mut().zip(x.row(i)).zip(y.row(i)) {
                            *o = f * (p - q);
                        }
                    }
                });
                accumulate(grads, self, *a, |buf| add_into(buf, &dx));
                accumulate(grads, self, *b, |buf| {
                    buf.iter_mut().zip(&dx).for_each(|(o, v)| *o -= v)
                });
            }
            Op::MarginRanking {
                distances,
                positives,
                per_positive,
                margin,
            } => {
                let s = g[0];
                let data = self.value(*distances).data();
                let (positives, per_positive) = (*positives, *per_positive);
                accumulate(grads, self, *distances, |buf| {
                    for p in 0..positives {
                        let base = positives + p * per_positive;
                        for q in 0..per_positive {
                            // strict inequality: zero subgradient at the kink
                            if data[p] - data[base + q] + margin > 0.0 {
                                buf[p] += s;
                                buf[base + q] -= s;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
}

fn accumulate(
    grads: &mut [Option<Tensor>],
    tape: &Tape,
    var: Var,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = &mut grads[var.0];
    let buf = slot.get_or_insert_with(|| Tensor::zeros(tape.value(var).shape().to_vec()));
    f(buf.data_mut());
}

pub(crate) fn matmul_kernel(x: &Tensor, y: &Tensor) -> Tensor {
    let (n, m) = (x.shape()[0], y.shape()[1]);
    let mut out = vec![0.0; n * m];
    for_each_row(&mut out, m, |i, row| {
        for (p, &xv) in x.row(i).iter().enumerate() {
            if xv != 0.0 {
                let yr = &y.data()[p * m..(p + 1) * m];
                row.iter_mut().zip(yr).for_each(|(o, v)| *o += xv * v);
            }
        }
    });
    Tensor::matrix(n, m, out).expect("matmul output shape")
}
