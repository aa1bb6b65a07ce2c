use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn norm1(m: &Array2<f64>) -> f64 {
    m.columns().into_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(M)` by scaling and squaring around a truncated Taylor series.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 1/2, so the
/// series converges below machine precision well before the 30th term.
pub fn matrix_exponential(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::shape(format!("matrix exponential of a {:?} matrix", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let norm = norm1(&m.to_owned());
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m.mapv(|v| v * 0.5f64.powi(squarings));

    let mut result = Array2::<f64>::eye(d);
    let mut term = Array2::<f64>::eye(d);
    for k in 1..=30 {
        term = term.dot(&a) / k as f64;
        result += &term;
        if norm1(&term) <= f64::EPSILON * norm1(&result) * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(result)
}
