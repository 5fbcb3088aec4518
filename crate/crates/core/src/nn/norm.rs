//! Per-channel batch normalization.

use super::{Array4, Mode, Scalar};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
    shape: [usize; 4],
}

/// Batch statistics of one training forward pass, applied to the running
/// estimates separately so the forward itself can stay `&self`.
#[derive(Clone, Debug)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes over (N, H, W) per channel. Train mode uses batch
    /// statistics; eval mode uses the running estimates.
    pub fn forward(
        &self,
        x: &Array4<T>,
        mode: Mode,
    ) -> Result<(Array4<T>, BnCache<T>, Option<BnBatchStats<T>>)> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {c}",
                self.channels()
            )));
        }
        let plane = h * w;
        let m = n * plane;
        if mode == Mode::Train && m < 2 {
            return Err(Error::Shape(format!(
                "training batch norm needs at least 2 values per channel, got {m}"
            )));
        }
        let eps = T::lit(self.eps);
        let data = x.data();
        let mut y = Array4::zeros(x.shape());
        let mut x_hat = vec![T::zero(); data.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = (mode == Mode::Train).then(|| BnBatchStats {
            mean: vec![T::zero(); c],
            var: vec![T::zero(); c],
        });
        let mt = T::from_usize(m).expect("count fits");
        for ch in 0..c {
            let planes = (0..n).map(|s| &data[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = planes.clone().flatten().fold(T::zero(), |a, &v| a + v) / mt;
                    let ss = planes
                        .flatten()
                        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
                    let st = stats.as_mut().expect("train stats");
                    st.mean[ch] = mean;
                    st.var[ch] = ss / T::from_usize(m - 1).expect("count fits");
                    (mean, ss / mt)
                }
                Mode::Eval => (self.running_mean[ch], self.running_var[ch]),
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            let yd = y.data_mut();
            for s in 0..n {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (data[i] - mean) * is;
                    x_hat[i] = xh;
                    yd[i] = g * xh + b;
                }
            }
        }
        Ok((
            y,
            BnCache {
                x_hat,
                inv_std,
                mode,
                shape: x.shape(),
            },
            stats,
        ))
    }

    /// Exponential moving update of the running estimates.
    pub fn update_running(&mut self, stats: &BnBatchStats<T>) {
        let mom = T::lit(self.momentum);
        let keep = T::one() - mom;
        for ch in 0..self.channels() {
            self.running_mean[ch] = keep * self.running_mean[ch] + mom * stats.mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + mom * stats.var[ch];
        }
    }

    /// Returns `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(
        &self,
        grad_y: &Array4<T>,
        cache: &BnCache<T>,
    ) -> Result<(Array4<T>, Vec<T>, Vec<T>)> {
        if grad_y.shape() != cache.shape {
            return Err(Error::Shape(format!(
                "batch norm gradient {:?} vs forward {:?}",
                grad_y.shape(),
                cache.shape
            )));
        }
        let [n, c, h, w] = cache.shape;
        let plane = h * w;
        let mt = T::from_usize(n * plane).expect("count fits");
        let gy = grad_y.data();
        let mut gx = Array4::zeros(cache.shape);
        let mut g_gamma = vec![T::zero(); c];
        let mut g_beta = vec![T::zero(); c];
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for i in idx() {
                sum_g = sum_g + gy[i];
                sum_gx = sum_gx + gy[i] * cache.x_hat[i];
            }
            g_gamma[ch] = sum_gx;
            g_beta[ch] = sum_g;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            let gxd = gx.data_mut();
            match cache.mode {
                Mode::Train => {
                    let k = scale / mt;
                    for i in idx() {
                        gxd[i] = k * (mt * gy[i] - sum_g - cache.x_hat[i] * sum_gx);
                    }
                }
                Mode::Eval => {
                    for i in idx() {
                        gxd[i] = scale * gy[i];
                    }
                }
            }
        }
        Ok((gx, g_gamma, g_beta))
    }
}
