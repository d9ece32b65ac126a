//! Dense f64 tensors and a reverse-mode tape over the handful of coarse
//! primitives the encoder and the ranking loss are built from.
//!
//! Every primitive computes each output element with a fixed sequence of
//! floating-point operations, independent of how rows are split across
//! threads, so results are bit-identical for any thread count.

mod check;
mod kernels;
mod tape;

use std::sync::Arc;

pub use check::{finite_difference_check, relative_error};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Minimum norm accepted by [`l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; 1 for scalars.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of trailing dimensions; 1 for vectors and scalars.
    pub fn row_width(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Offsets delimiting variable-length segments over a flat axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    offsets: Arc<[usize]>,
    owners: Arc<[usize]>,
}

impl SegmentSpec {
    pub fn new(offsets: Vec<usize>) -> Result<Self> {
        if offsets.first() != Some(&0) {
            return Err(Error::InvalidArgument(
                "segment offsets must start at 0".into(),
            ));
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "segment offsets must be non-decreasing".into(),
            ));
        }
        let mut owners = Vec::with_capacity(*offsets.last().unwrap());
        for (s, w) in offsets.windows(2).enumerate() {
            owners.extend(std::iter::repeat_n(s, w[1] - w[0]));
        }
        Ok(Self {
            offsets: offsets.into(),
            owners: owners.into(),
        })
    }

    /// Segments of the given lengths, laid out back to back.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Self::new(offsets).expect("lengths produce valid offsets")
    }

    pub fn segment_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn flat_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Segment index of every flat position.
    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub(crate) fn check_covers(&self, len: usize) -> Result<()> {
        if self.flat_len() != len {
            return Err(Error::Shape(format!(
                "segments cover {} positions but the input has {len}",
                self.flat_len()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_non_empty(&self) -> Result<()> {
        match (0..self.segment_count()).find(|&s| self.offsets[s] == self.offsets[s + 1]) {
            Some(s) => Err(Error::EmptySegment(s)),
            None => Ok(()),
        }
    }
}

/// Softmax within each segment, max-shifted.
pub fn segment_softmax(logits: &Tensor, segments: &SegmentSpec) -> Result<Tensor> {
    segments.check_covers(logits.len())?;
    segments.check_non_empty()?;
    Ok(Tensor::vector(kernels::segment_softmax(
        logits.data(),
        segments,
    )))
}

/// Elementwise ELU with unit scale.
pub fn elu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| kernels::elu(v)).collect(),
    }
}

/// Scales a vector (or every row of a matrix) to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let width = if v.shape.len() <= 1 { v.len() } else { v.row_width() };
    let (data, _) = kernels::normalize_rows(v.data(), width)?;
    Ok(Tensor {
        shape: v.shape.clone(),
        data,
    })
}

pub fn euclidean_distance(u: &Tensor, v: &Tensor) -> Result<f64> {
    if u.shape != v.shape {
        return Err(Error::Shape(format!(
            "cannot compare shapes {:?} and {:?}",
            u.shape, v.shape
        )));
    }
    Ok(kernels::distance(u.data(), v.data()))
}

/// Gradients of `‖u − v‖` with respect to `u` and `v`; zero when `u = v`.
pub fn euclidean_distance_grad(u: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = euclidean_distance(u, v)?;
    let gu: Vec<f64> = if d > 0.0 {
        u.data.iter().zip(&v.data).map(|(a, b)| (a - b) / d).collect()
    } else {
        vec![0.0; u.len()]
    };
    let gv = gu.iter().map(|g| -g).collect();
    Ok((
        Tensor {
            shape: u.shape.clone(),
            data: gu,
        },
        Tensor {
            shape: v.shape.clone(),
            data: gv,
        },
    ))
}
