use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `point` against central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` on every coordinate and returns the largest
/// relative error.
pub fn finite_difference_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let out = f(&mut tape, input)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::Shape(format!(
                "finite difference check needs a scalar function, got shape {:?}",
                value.shape()
            )));
        }
        Ok(value.item())
    };

    let mut tape = Tape::new();
    let input = tape.leaf(point.clone());
    let out = f(&mut tape, input)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zeros(input, point);

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
