use std::io::Write;

use super::config::Variant;
use super::model::CropNet;
use crate::data::Band;
use crate::error::{Error, Result};
use crate::features::MedianFeature2D;
use crate::nn::{global_avg_pool_backward, Array4, Matrix, Scalar};

/// Grad-CAM relevance over the band x bin grid, max-normalized to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    pub class: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ImportanceMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Row with the largest total relevance; ties go to the lowest row.
    pub fn dominant_row(&self) -> usize {
        let sums = self.row_sums();
        let mut best = 0;
        for (i, s) in sums.iter().enumerate() {
            if *s > sums[best] {
                best = i;
            }
        }
        best
    }

    /// Element-wise mean of several maps of equal shape.
    pub fn mean(maps: &[ImportanceMap]) -> Result<ImportanceMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Validation("no maps to average".into()))?;
        let mut values = vec![0.0; first.values.len()];
        for m in maps {
            if m.shape() != first.shape() {
                return Err(Error::Shape("importance maps differ in shape".into()));
            }
            for (a, v) in values.iter_mut().zip(&m.values) {
                *a += v / maps.len() as f64;
            }
        }
        Ok(ImportanceMap {
            class: first.class,
            rows: first.rows,
            cols: first.cols,
            values,
        })
    }

    /// Long-format `band,bin,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "band,bin,value")?;
        for r in 0..self.rows {
            let band = Band::from_index(r)
                .map(|b| b.name().to_string())
                .unwrap_or_else(|| r.to_string());
            for c in 0..self.cols {
                writeln!(w, "{band},{c},{}", self.get(r, c))?;
            }
        }
        Ok(())
    }
}

/// Bilinear resize with corner alignment: output edges sample input edges.
fn upsample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let coord = |i: usize, d: usize, s: usize| {
        if d <= 1 || s <= 1 {
            0.0
        } else {
            i as f64 * (s - 1) as f64 / (d - 1) as f64
        }
    };
    let mut out = vec![0.0; dh * dw];
    for y in 0..dh {
        let fy = coord(y, dh, sh);
        let y0 = (fy.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..dw {
            let fx = coord(x, dw, sw);
            let x0 = (fx.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[y * dw + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

impl<T: Scalar> CropNet<T> {
    /// Grad-CAM of `class` on one composite: channel weights are the spatial
    /// mean of the class score's gradient at the last block's activations.
    pub fn grad_cam(&self, feature: &MedianFeature2D, class: usize) -> Result<ImportanceMap> {
        let cfg = self.config();
        if cfg.variant != Variant::TwoD {
            return Err(Error::Config("grad-cam needs the 2D variant".into()));
        }
        if class >= cfg.n_classes {
            return Err(Error::Validation(format!(
                "class {class} outside {} classes",
                cfg.n_classes
            )));
        }
        let (rows, cols) = feature.shape();
        let x = Array4::from_vec(
            self.batch_shape(1),
            feature.as_slice().iter().map(|v| T::lit(*v)).collect(),
        )?;
        let fwd = self.forward(&x, crate::nn::Mode::Eval, None)?;
        let acts = fwd.cache.features();
        let mut onehot = Matrix::zeros(1, cfg.n_classes);
        onehot.row_mut(0)[class] = T::one();
        let (g_pooled, _, _) = self
            .head()
            .backward(&onehot, &Matrix::zeros(1, self.head().inputs))?;
        let g_acts = global_avg_pool_backward(&g_pooled, acts.shape())?;
        let [_, c, h, w] = acts.shape();
        let plane = h * w;
        let mut cam = vec![0.0; plane];
        for k in 0..c {
            let grads = &g_acts.data()[k * plane..(k + 1) * plane];
            let alpha = grads.iter().map(|g| g.to_f64().unwrap_or(0.0)).sum::<f64>() / plane as f64;
            for (m, a) in cam.iter_mut().zip(&acts.data()[k * plane..(k + 1) * plane]) {
                *m += alpha * a.to_f64().unwrap_or(0.0);
            }
        }
        for m in &mut cam {
            *m = m.max(0.0);
        }
        let mut values = upsample(&cam, h, w, rows, cols);
        let max = values.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
        Ok(ImportanceMap {
            class,
            rows,
            cols,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cropnet::CropNetConfig;

    fn net() -> CropNet<f64> {
        CropNet::build(CropNetConfig::two_d(12, 3).with_widths([3, 4, 4, 5]), 7).unwrap()
    }

    fn feature(seed: u64) -> MedianFeature2D {
        let mut f = MedianFeature2D::zeros(12);
        for b in 0..10 {
            for t in 0..12 {
                let v = ((b * 31 + t * 17 + seed as usize * 13) % 23) as f64 / 23.0;
                f.set(b, t, v);
            }
        }
        f
    }

    #[test]
    fn map_is_normalized() {
        let m = net().grad_cam(&feature(1), 1).unwrap();
        assert_eq!(m.shape(), (10, 12));
        assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let max = m.values().iter().cloned().fold(0.0, f64::max);
        assert!(max == 0.0 || (max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_feature_gives_zero_map() {
        let m = net().grad_cam(&MedianFeature2D::zeros(12), 0).unwrap();
        assert!(m.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn class_out_of_range() {
        assert!(net().grad_cam(&feature(1), 3).is_err());
    }

    #[test]
    fn positive_rescale_of_class_row_preserves_map() {
        let mut a = net();
        let f = feature(2);
        let before = a.grad_cam(&f, 2).unwrap();
        let inputs = a.head().inputs;
        for w in &mut a.head_mut().weight[2 * inputs..3 * inputs] {
            *w *= 3.5;
        }
        let after = a.grad_cam(&f, 2).unwrap();
        for (x, y) in before.values().iter().zip(after.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_aligns_corners() {
        let src = [0.0, 1.0, 2.0, 3.0];
        let out = upsample(&src, 2, 2, 3, 3);
        assert_eq!(out, [0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
        assert_eq!(upsample(&[4.0], 1, 1, 2, 2), [4.0; 4]);
    }
}
