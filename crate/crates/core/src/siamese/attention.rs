//! Scaled dot-product attention.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// Softmax weights over the keys; non-negative, sums to one.
    pub weights: Array1<f64>,
    /// Weighted sum of value rows.
    pub output: Array1<f64>,
}

/// `softmax(q Kᵀ / sqrt(d_k)) V` for a single query row.
pub fn attention(q: &[f64], keys: ArrayView2<f64>, values: ArrayView2<f64>, d_k: usize) -> Result<Attention> {
    if d_k == 0 {
        return Err(Error::Shape("d_k must be positive".into()));
    }
    if keys.ncols() != q.len() {
        return Err(Error::Shape(format!("query has {} columns, keys {}", q.len(), keys.ncols())));
    }
    if keys.nrows() != values.nrows() || keys.nrows() == 0 {
        return Err(Error::Shape(format!(
            "{} keys but {} value rows",
            keys.nrows(),
            values.nrows()
        )));
    }
    let q = ndarray::ArrayView1::from(q);
    let mut weights = keys.dot(&q) / (d_k as f64).sqrt();
    softmax_in_place(weights.as_slice_mut().expect("contiguous"));
    let output = values.t().dot(&weights);
    Ok(Attention { weights, output })
}

/// Numerically stable softmax over a slice.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a score matrix.
pub(crate) fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    scores
}
