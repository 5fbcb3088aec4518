//! ReLU and channel-wise (spatial) dropout.

use rand::Rng;

use super::{Array4, Mode, Scalar};
use crate::error::{Error, Result};

/// `max(0, x)`; NaN passes through so divergence reaches the loss check.
pub fn relu_forward<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(grad_y: &Array4<T>, y: &Array4<T>) -> Array4<T> {
    let mut g = grad_y.clone();
    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
        if !(*yv > T::zero()) {
            *gv = T::zero();
        }
    }
    g
}

/// Per-(sample, channel) multipliers: `0` for dropped channels and
/// `1 / (1 - p)` for kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    pub scales: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn apply(&self, x: &Array4<T>) -> Array4<T> {
        let plane = x.plane();
        let mut y = x.clone();
        for (chunk, &s) in y.data_mut().chunks_mut(plane).zip(&self.scales) {
            for v in chunk {
                *v = *v * s;
            }
        }
        y
    }
}

/// Inverted spatial dropout: each whole channel is zeroed with probability
/// `p`. Eval mode returns the input unchanged and no mask.
pub fn spatial_dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Array4<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array4<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let scales = (0..x.n() * x.c())
        .map(|_| if rng.gen_bool(p) { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask { scales };
    Ok((mask.apply(x), Some(mask)))
}
