//! Global average pooling.

use super::{Array4, Matrix, Scalar};
use crate::error::{Error, Result};

/// Mean over (H, W) for every (sample, channel): `N x C x H x W -> N x C`.
pub fn global_avg_pool<T: Scalar>(x: &Array4<T>) -> Result<Matrix<T>> {
    let plane = x.plane();
    if plane == 0 {
        return Err(Error::Shape("cannot pool an empty plane".into()));
    }
    let denom = T::from_usize(plane).expect("plane fits");
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) / denom)
        .collect();
    Matrix::from_vec(x.n(), x.c(), data)
}

/// Spreads `grad[n, c] / (H W)` over the pooled plane.
pub fn global_avg_pool_backward<T: Scalar>(
    grad: &Matrix<T>,
    shape: [usize; 4],
) -> Result<Array4<T>> {
    let [n, c, h, w] = shape;
    if grad.rows() != n || grad.cols() != c {
        return Err(Error::Shape(format!(
            "pool gradient {}x{} vs input {shape:?}",
            grad.rows(),
            grad.cols()
        )));
    }
    let plane = h * w;
    let denom = T::from_usize(plane).expect("plane fits");
    let mut out = Array4::zeros(shape);
    for (chunk, &g) in out.data_mut().chunks_mut(plane).zip(grad.data()) {
        let v = g / denom;
        chunk.iter_mut().for_each(|x| *x = v);
    }
    Ok(out)
}
