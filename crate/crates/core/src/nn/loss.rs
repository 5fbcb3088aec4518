//! Softmax and mean cross-entropy.

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Matrix<T>)> {
    let (n, k) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Validation(format!(
            "label {bad} outside {k} classes"
        )));
    }
    let nt = T::from_usize(n.max(1)).expect("batch fits");
    let mut grad = softmax(logits);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln();
        loss = loss + (lse - row[label]);
        let g = grad.row_mut(r);
        g[label] = g[label] - T::one();
        for v in g.iter_mut() {
            *v = *v / nt;
        }
    }
    Ok((loss / nt, grad))
}
