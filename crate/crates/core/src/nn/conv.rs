//! Strided, zero-padded 2D cross-correlation via im2col + GEMM.

use super::{matmul, Array4, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeometry {
    /// 3x3 kernel, padding 1, equal stride on both axes.
    pub fn square3(stride: usize) -> Self {
        ConvGeometry {
            kernel: (3, 3),
            stride: (stride, stride),
            pad: (1, 1),
        }
    }

    /// 3x1 kernel along H for `L x 1` signals; stride applies to H only.
    pub fn vertical3(stride: usize) -> Self {
        ConvGeometry {
            kernel: (3, 1),
            stride: (stride, 1),
            pad: (1, 0),
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1;
        let ow = (w + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1;
        (oh, ow)
    }

    fn check(&self, x: [usize; 4], weight_len: usize, c_out: usize) -> Result<()> {
        let [_, c_in, h, w] = x;
        if weight_len != c_out * c_in * self.taps() {
            return Err(Error::Shape(format!(
                "conv weight has {weight_len} values, expected {c_out}x{c_in}x{}x{}",
                self.kernel.0, self.kernel.1
            )));
        }
        if h + 2 * self.pad.0 < self.kernel.0 || w + 2 * self.pad.1 < self.kernel.1 {
            return Err(Error::Shape(format!("input {h}x{w} smaller than kernel")));
        }
        Ok(())
    }
}

/// Column matrix `[c_in * kh * kw, n * oh * ow]`.
fn im2col<T: Scalar>(x: &Array4<T>, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let [n, c_in, h, w] = x.shape();
    let (kh, kw) = g.kernel;
    let cols = n * oh * ow;
    let mut out = vec![T::zero(); c_in * kh * kw * cols];
    let data = x.data();
    for ci in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for s in 0..n {
                    let plane = &data[(s * c_in + ci) * h * w..(s * c_in + ci + 1) * h * w];
                    for y in 0..oh {
                        let iy = (y * g.stride.0 + ki) as isize - g.pad.0 as isize;
                        let base = (s * oh + y) * ow;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for xo in 0..ow {
                            let ix = (xo * g.stride.1 + kj) as isize - g.pad.1 as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + xo] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(
    cols: &[T],
    shape: [usize; 4],
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
) -> Array4<T> {
    let [n, c_in, h, w] = shape;
    let (kh, kw) = g.kernel;
    let ncols = n * oh * ow;
    let mut out = Array4::zeros(shape);
    let data = out.data_mut();
    for ci in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for s in 0..n {
                    let plane = &mut data[(s * c_in + ci) * h * w..(s * c_in + ci + 1) * h * w];
                    for y in 0..oh {
                        let iy = (y * g.stride.0 + ki) as isize - g.pad.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (s * oh + y) * ow;
                        for xo in 0..ow {
                            let ix = (xo * g.stride.1 + kj) as isize - g.pad.1 as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] =
                                    plane[iy as usize * w + ix as usize] + src[base + xo];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[n, co, y, x] = b[co] + sum w[co, ci, i, j] * x[n, ci, y*sh + i - ph, x*sw + j - pw]`.
pub fn conv_forward<T: Scalar>(
    x: &Array4<T>,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
) -> Result<Array4<T>> {
    let c_out = bias.len();
    g.check(x.shape(), weight.len(), c_out)?;
    let [n, c_in, h, w] = x.shape();
    let (oh, ow) = g.output_hw(h, w);
    let k = c_in * g.taps();
    let cols = im2col(x, g, oh, ow);
    let ncols = n * oh * ow;
    let mut y = vec![T::zero(); c_out * ncols];
    matmul(c_out, k, ncols, weight, false, &cols, false, &mut y, false);
    let plane = oh * ow;
    let mut out = Array4::zeros([n, c_out, oh, ow]);
    let od = out.data_mut();
    for co in 0..c_out {
        let b = bias[co];
        for s in 0..n {
            let src = &y[co * ncols + s * plane..co * ncols + (s + 1) * plane];
            let dst = &mut od[(s * c_out + co) * plane..(s * c_out + co + 1) * plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = *v + b;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// Absent when the caller did not ask for it (first layer).
    pub grad_x: Option<Array4<T>>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

/// Exact gradients of [`conv_forward`] with respect to input, weight and bias.
pub fn conv_backward<T: Scalar>(
    grad_out: &Array4<T>,
    x: &Array4<T>,
    weight: &[T],
    g: &ConvGeometry,
    need_grad_x: bool,
) -> Result<ConvGrads<T>> {
    let [n, c_out, oh, ow] = grad_out.shape();
    g.check(x.shape(), weight.len(), c_out)?;
    let [xn, c_in, h, w] = x.shape();
    if xn != n || g.output_hw(h, w) != (oh, ow) {
        return Err(Error::Shape(format!(
            "gradient {:?} inconsistent with input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let k = c_in * g.taps();
    let plane = oh * ow;
    let ncols = n * plane;
    // Gather grad_out as [c_out, n * plane].
    let mut gm = vec![T::zero(); c_out * ncols];
    let gd = grad_out.data();
    for s in 0..n {
        for co in 0..c_out {
            gm[co * ncols + s * plane..co * ncols + (s + 1) * plane]
                .copy_from_slice(&gd[(s * c_out + co) * plane..(s * c_out + co + 1) * plane]);
        }
    }
    let grad_b = (0..c_out)
        .map(|co| {
            gm[co * ncols..(co + 1) * ncols]
                .iter()
                .fold(T::zero(), |a, &v| a + v)
        })
        .collect();
    let cols = im2col(x, g, oh, ow);
    let mut grad_w = vec![T::zero(); c_out * k];
    matmul(c_out, ncols, k, &gm, false, &cols, true, &mut grad_w, false);
    let grad_x = if need_grad_x {
        let mut gcols = cols;
        matmul(k, c_out, ncols, weight, true, &gm, false, &mut gcols, false);
        Some(col2im(&gcols, x.shape(), g, oh, ow))
    } else {
        None
    };
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
