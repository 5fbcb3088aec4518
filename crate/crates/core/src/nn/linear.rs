//! Fully connected layer `y = x W^T + b`.

use super::{matmul, Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `out x in`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.inputs {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.inputs,
                x.cols()
            )));
        }
        let n = x.rows();
        let mut y = Matrix::zeros(n, self.outputs);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        matmul(
            n,
            self.inputs,
            self.outputs,
            x.data(),
            false,
            &self.weight,
            true,
            y.data_mut(),
            true,
        );
        Ok(y)
    }

    /// Returns `(grad_x, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        grad_y: &Matrix<T>,
        x: &Matrix<T>,
    ) -> Result<(Matrix<T>, Vec<T>, Vec<T>)> {
        if grad_y.cols() != self.outputs || x.cols() != self.inputs || grad_y.rows() != x.rows() {
            return Err(Error::Shape("linear backward shapes inconsistent".into()));
        }
        let n = x.rows();
        let mut gw = vec![T::zero(); self.outputs * self.inputs];
        matmul(
            self.outputs,
            n,
            self.inputs,
            grad_y.data(),
            true,
            x.data(),
            false,
            &mut gw,
            false,
        );
        let gb = (0..self.outputs)
            .map(|o| (0..n).fold(T::zero(), |a, r| a + grad_y.get(r, o)))
            .collect();
        let mut gx = Matrix::zeros(n, self.inputs);
        matmul(
            n,
            self.outputs,
            self.inputs,
            grad_y.data(),
            false,
            &self.weight,
            false,
            gx.data_mut(),
            false,
        );
        Ok((gx, gw, gb))
    }
}
