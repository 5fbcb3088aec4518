use serde::{Deserialize, Serialize};

use crate::data::BAND_COUNT;
use crate::error::{Error, Result};
use crate::nn::ConvGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// 3x3 convolutions over the 10 x t band/time matrix.
    #[serde(rename = "2d")]
    TwoD,
    /// Kernel-3 convolutions along a flat feature vector.
    #[serde(rename = "1d")]
    OneD,
}

pub const BLOCKS: usize = 4;
/// Blocks (0-based) whose first convolution has stride 2.
pub const STRIDED_BLOCKS: [usize; 2] = [0, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropNetConfig {
    pub variant: Variant,
    /// `(H, W)` of the single-channel input: `(10, t)` for 2D, `(L, 1)` for 1D.
    pub input_shape: (usize, usize),
    pub widths: [usize; BLOCKS],
    pub dropout: f64,
    pub n_classes: usize,
}

impl CropNetConfig {
    /// Reference widths (64, 128, 256, 512) over a 10 x t composite.
    pub fn two_d(bins: usize, n_classes: usize) -> Self {
        CropNetConfig {
            variant: Variant::TwoD,
            input_shape: (BAND_COUNT, bins),
            widths: [64, 128, 256, 512],
            dropout: 0.1,
            n_classes,
        }
    }

    /// Reference widths over a flat vector of length `len`.
    pub fn one_d(len: usize, n_classes: usize) -> Self {
        CropNetConfig {
            variant: Variant::OneD,
            input_shape: (len, 1),
            widths: [64, 128, 256, 512],
            dropout: 0.1,
            n_classes,
        }
    }

    pub fn with_widths(mut self, widths: [usize; BLOCKS]) -> Self {
        self.widths = widths;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let (h, w) = self.input_shape;
        match self.variant {
            Variant::TwoD if h < 4 || w < 4 => Err(Error::Config(format!(
                "input {h}x{w} too small for two stride-2 stages"
            ))),
            Variant::OneD if w != 1 => Err(Error::Config("1D input must have width 1".into())),
            Variant::OneD if h < 4 => Err(Error::Config(format!(
                "input length {h} too small for two stride-2 stages"
            ))),
            _ => Ok(()),
        }
    }

    pub fn geometry(&self, stride: usize) -> ConvGeometry {
        match self.variant {
            Variant::TwoD => ConvGeometry::square3(stride),
            Variant::OneD => ConvGeometry::vertical3(stride),
        }
    }

    pub fn kernel_taps(&self) -> usize {
        self.geometry(1).taps()
    }

    /// `(c_in, c_out, stride)` of the eight convolutions in order.
    pub fn conv_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = Vec::with_capacity(2 * BLOCKS);
        let mut c_in = 1;
        for (b, &w) in self.widths.iter().enumerate() {
            let stride = if STRIDED_BLOCKS.contains(&b) { 2 } else { 1 };
            plan.push((c_in, w, stride));
            plan.push((w, w, 1));
            c_in = w;
        }
        plan
    }

    /// Spatial size after each block.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = self.input_shape;
        let mut shapes = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let stride = if STRIDED_BLOCKS.contains(&b) { 2 } else { 1 };
            let g = self.geometry(stride);
            (h, w) = g.output_hw(h, w);
            shapes.push((h, w));
        }
        shapes
    }

    /// Closed-form trainable parameter count: conv weights and biases, BN
    /// scale and shift, and the linear head. Running statistics excluded.
    pub fn param_count(&self) -> usize {
        let taps = self.kernel_taps();
        let convs: usize = self
            .conv_plan()
            .iter()
            .map(|&(ci, co, _)| taps * ci * co + co + 2 * co)
            .sum();
        convs + self.widths[BLOCKS - 1] * self.n_classes + self.n_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_budget() {
        assert_eq!(CropNetConfig::two_d(43, 7).param_count(), 4_691_655);
    }

    #[test]
    fn shape_trace() {
        let cfg = CropNetConfig::two_d(43, 7);
        assert_eq!(cfg.block_shapes(), [(5, 22), (5, 22), (3, 11), (3, 11)]);
        let one = CropNetConfig::one_d(430, 7);
        assert_eq!(one.block_shapes(), [(215, 1), (215, 1), (108, 1), (108, 1)]);
    }

    #[test]
    fn validation() {
        assert!(CropNetConfig::two_d(3, 7).validate().is_err());
        assert!(CropNetConfig::one_d(3, 7).validate().is_err());
        assert!(CropNetConfig::two_d(43, 1).validate().is_err());
        assert!(CropNetConfig::two_d(43, 7)
            .with_widths([0, 1, 1, 1])
            .validate()
            .is_err());
        assert!(CropNetConfig::one_d(35, 7).validate().is_ok());
    }
}
