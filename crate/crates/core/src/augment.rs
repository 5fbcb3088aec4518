//! Phenology-aware augmentation of median composites: time shift, time scale
//! and magnitude warping.
//!
//! Shift and scale move the compositing span and recomposite from the raw
//! observations; warping multiplies the composited matrix by one smooth random
//! curve shared by all bands. In [`augment`] each transformation fires
//! independently with probability `apply_prob`, in the order
//! shift, scale, composite, warp.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{SpectralTimeSeries, BAND_COUNT};
use crate::error::{Error, Result};
use crate::features::{
    ceil_div, composite_windows, reshape_2d, CompositeConfig, MedianFeature1D, MedianFeature2D,
};
use crate::rng::{self, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Inclusive range of the span offset, in days.
    pub shift_range: (i32, i32),
    /// Inclusive range drawn independently for the start and end offsets.
    pub scale_range: (i32, i32),
    pub warp_sigma: f64,
    pub warp_knots: usize,
    /// Probability of applying each enabled transformation.
    pub apply_prob: f64,
    pub shift: bool,
    pub scale: bool,
    pub warp: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            shift_range: (-10, 10),
            scale_range: (-30, 10),
            warp_sigma: 0.2,
            warp_knots: 5,
            apply_prob: 0.5,
            shift: true,
            scale: true,
            warp: true,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.shift_range;
        let (c0, c1) = self.scale_range;
        if s0 > s1 || c0 > c1 {
            return Err(Error::Config(
                "augmentation ranges must satisfy lo <= hi".into(),
            ));
        }
        if !(self.warp_sigma >= 0.0 && self.warp_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "warp_sigma {} must be >= 0",
                self.warp_sigma
            )));
        }
        if self.warp_knots < 2 {
            return Err(Error::Config("warp_knots must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply_prob {} outside [0, 1]",
                self.apply_prob
            )));
        }
        Ok(())
    }

    /// Only the listed transformations enabled.
    pub fn only(shift: bool, scale: bool, warp: bool) -> Self {
        AugmentationConfig {
            shift,
            scale,
            warp,
            ..Default::default()
        }
    }
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Clone, Debug)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Shape(format!(
                "spline needs >= 2 matching knots, got {n} and {}",
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "spline knots must be strictly increasing".into(),
            ));
        }
        // Thomas algorithm on the interior second derivatives.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(NaturalCubicSpline { xs, ys, m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let j = self.xs[1..n - 1].partition_point(|&k| k <= x);
        let h = self.xs[j + 1] - self.xs[j];
        let b = (x - self.xs[j]) / h;
        let a = 1.0 - b;
        // Written as y_j + b * dy so that constant ordinates evaluate exactly.
        self.ys[j]
            + b * (self.ys[j + 1] - self.ys[j])
            + ((a * a * a - a) * self.m[j] + (b * b * b - b) * self.m[j + 1]) * h * h / 6.0
    }
}

/// Smooth multiplicative curve over bins `1..=t` through `K` evenly spaced
/// anchors `kappa_j = 1 + (j - 1)(t - 1)/(K - 1)`.
#[derive(Clone, Debug)]
pub struct WarpSpline {
    knots: Vec<f64>,
    ordinates: Vec<f64>,
    weights: Vec<f64>,
}

impl WarpSpline {
    pub fn from_ordinates(bins: usize, ordinates: Vec<f64>) -> Result<Self> {
        let k = ordinates.len();
        if k < 2 {
            return Err(Error::Config("warp needs at least 2 knots".into()));
        }
        if k > bins {
            return Err(Error::Config(format!("{k} warp knots exceed {bins} bins")));
        }
        let knots: Vec<f64> = (0..k)
            .map(|j| 1.0 + j as f64 * (bins - 1) as f64 / (k - 1) as f64)
            .collect();
        let spline = NaturalCubicSpline::new(knots.clone(), ordinates.clone())?;
        let weights = (1..=bins).map(|i| spline.eval(i as f64)).collect();
        Ok(WarpSpline {
            knots,
            ordinates,
            weights,
        })
    }

    /// Draws ordinates i.i.d. from Normal(1, sigma^2).
    pub fn draw<R: rand::Rng + ?Sized>(
        bins: usize,
        knots: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if knots > bins {
            return Err(Error::Config(format!(
                "{knots} warp knots exceed {bins} bins"
            )));
        }
        let normal = Normal::new(1.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let ordinates = (0..knots).map(|_| normal.sample(rng)).collect();
        Self::from_ordinates(bins, ordinates)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn ordinates(&self) -> &[f64] {
        &self.ordinates
    }

    /// `w_i = S(i)` for `i = 1..=t`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `x'[b][i] = max(0, w_i x[b][i])` for every band.
    pub fn apply(&self, f: &MedianFeature2D) -> Result<MedianFeature2D> {
        if f.bins() != self.weights.len() {
            return Err(Error::Shape(format!(
                "warp built for {} bins applied to {}",
                self.weights.len(),
                f.bins()
            )));
        }
        Ok(scale_bins(f, &self.weights))
    }
}

fn scale_bins(f: &MedianFeature2D, weights: &[f64]) -> MedianFeature2D {
    let mut out = f.clone();
    for b in 0..BAND_COUNT {
        for (i, &w) in weights.iter().enumerate() {
            out.set(b, i, (w * f.get(b, i)).max(0.0));
        }
    }
    out
}

/// Recomposites over `[start + delta, end + delta]` with the same window.
pub fn time_shift(
    series: &SpectralTimeSeries,
    base: &CompositeConfig,
    delta: i32,
) -> Result<MedianFeature1D> {
    base.validate()?;
    composite_windows(
        series,
        base.start_doy + delta,
        base.end_doy + delta,
        base.window as i32,
        base.bins(),
        base.max_missing_fraction,
    )
}

/// Recomposites over `[start + delta_s, end + delta_e]` with the bin count of
/// `base` and window `d' = ceil(span' / t)`.
pub fn time_scale(
    series: &SpectralTimeSeries,
    base: &CompositeConfig,
    delta_s: i32,
    delta_e: i32,
) -> Result<MedianFeature1D> {
    base.validate()?;
    recomposite(
        series,
        base,
        base.start_doy + delta_s,
        base.end_doy + delta_e,
        true,
    )
}

/// Window width used when the span becomes `[start, end)` with `bins` bins.
pub fn rescaled_window(start: i32, end: i32, bins: usize) -> i32 {
    ceil_div(end - start, bins as i32)
}

fn recomposite(
    series: &SpectralTimeSeries,
    base: &CompositeConfig,
    start: i32,
    end: i32,
    rescale: bool,
) -> Result<MedianFeature1D> {
    if start >= end {
        return Err(Error::Config(format!(
            "scaled span {start}..{end} is empty"
        )));
    }
    let bins = base.bins();
    let width = if rescale {
        rescaled_window(start, end, bins)
    } else {
        base.window as i32
    };
    composite_windows(series, start, end, width, bins, base.max_missing_fraction)
}

/// Multiplies every band by the same random natural-spline curve.
pub fn magnitude_warp<R: rand::Rng + ?Sized>(
    f: &MedianFeature2D,
    sigma: f64,
    knots: usize,
    rng: &mut R,
) -> Result<MedianFeature2D> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("warp sigma {sigma} must be >= 0")));
    }
    WarpSpline::draw(f.bins(), knots, sigma, rng)?.apply(f)
}

/// Which transformations fired for one draw, and with what parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentationDraw {
    pub shift: Option<i32>,
    pub scale: Option<(i32, i32)>,
    pub warp: Option<Vec<f64>>,
}

/// Draws the transformation parameters for `(seed, sample, epoch)`. Each
/// transformation uses its own counter-based stream.
pub fn draw_augmentation(
    cfg: &AugmentationConfig,
    bins: usize,
    seed: u64,
    sample_id: &str,
    epoch: u64,
) -> Result<AugmentationDraw> {
    let key = rng::sample_key(sample_id);
    let mut draw = AugmentationDraw::default();

    let mut r = rng::stream(seed, Tag::Shift, &[key, epoch]);
    if r.gen_bool(cfg.apply_prob) && cfg.shift {
        draw.shift = Some(r.gen_range(cfg.shift_range.0..=cfg.shift_range.1));
    }
    let mut r = rng::stream(seed, Tag::Scale, &[key, epoch]);
    if r.gen_bool(cfg.apply_prob) && cfg.scale {
        let s = r.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
        let e = r.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
        draw.scale = Some((s, e));
    }
    let mut r = rng::stream(seed, Tag::Warp, &[key, epoch]);
    if r.gen_bool(cfg.apply_prob) && cfg.warp {
        let spline = WarpSpline::draw(bins, cfg.warp_knots, cfg.warp_sigma, &mut r)?;
        draw.warp = Some(spline.weights().to_vec());
    }
    Ok(draw)
}

/// One augmented 10 x t composite for `(seed, sample, epoch)`.
///
/// Shift and scale offsets add onto the span endpoints; the window is
/// re-derived only when scaling fired. Composite rejections propagate so the
/// caller can fall back to the un-augmented feature.
pub fn augment(
    series: &SpectralTimeSeries,
    sample_id: &str,
    base: &CompositeConfig,
    cfg: &AugmentationConfig,
    seed: u64,
    epoch: u64,
) -> Result<MedianFeature2D> {
    base.validate()?;
    cfg.validate()?;
    let draw = draw_augmentation(cfg, base.bins(), seed, sample_id, epoch)?;
    apply_draw(series, base, &draw)
}

/// Applies a previously drawn set of transformations.
pub fn apply_draw(
    series: &SpectralTimeSeries,
    base: &CompositeConfig,
    draw: &AugmentationDraw,
) -> Result<MedianFeature2D> {
    let mut start = base.start_doy;
    let mut end = base.end_doy;
    if let Some(d) = draw.shift {
        start += d;
        end += d;
    }
    if let Some((s, e)) = draw.scale {
        start += s;
        end += e;
    }
    let composite = recomposite(series, base, start, end, draw.scale.is_some())?;
    let f = reshape_2d(composite);
    Ok(match &draw.warp {
        Some(w) => scale_bins(&f, w),
        None => f,
    })
}
