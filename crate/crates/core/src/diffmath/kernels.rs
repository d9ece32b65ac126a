use rayon::prelude::*;

use super::{SegmentSpec, NORM_EPSILON};
use crate::error::{Error, Result};

/// Below this many values a row loop stays on the calling thread.
const PAR_MIN_LEN: usize = 1 << 14;

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Applies `f(row_index, row)` to every `width`-sized row of `out`.
pub(crate) fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    if out.len() >= PAR_MIN_LEN {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

pub(crate) fn segment_softmax(logits: &[f64], segments: &SegmentSpec) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for s in 0..segments.segment_count() {
        let r = segments.range(s);
        if r.is_empty() {
            continue;
        }
        let xs = &logits[r.clone()];
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ys = &mut out[r];
        let mut total = 0.0;
        for (y, &x) in ys.iter_mut().zip(xs) {
            *y = (x - max).exp();
            total += *y;
        }
        for y in ys.iter_mut() {
            *y /= total;
        }
    }
    out
}

/// Row-normalizes `data`, returning the normalized values and the original norms.
pub(crate) fn normalize_rows(data: &[f64], width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if width == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let norms: Vec<f64> = data
        .chunks(width)
        .map(|row| dot(row, row).sqrt())
        .collect();
    if let Some((index, &norm)) = norms
        .iter()
        .enumerate()
        .find(|(_, &n)| !(n > NORM_EPSILON))
    {
        return Err(Error::ZeroNorm { index, norm });
    }
    let mut out = data.to_vec();
    for_each_row(&mut out, width, |i, row| {
        let n = norms[i];
        for v in row.iter_mut() {
            *v /= n;
        }
    });
    Ok((out, norms))
}
