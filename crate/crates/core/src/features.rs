//! Feature construction from irregular reflectance time series.
//!
//! Median composites split the span `[start, end)` into `t = ceil((end - start) / d)`
//! half-open windows of `d` days (the last one truncated at `end`), take the
//! per-band median of the observations in each window, and fill empty windows
//! by linear interpolation between the nearest non-empty windows. Leading and
//! trailing gaps take the nearest available value.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Band, SpectralTimeSeries, BAND_COUNT, HYPER_BANDS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeConfig {
    /// First day-of-year of the span (inclusive).
    pub start_doy: i32,
    /// End day-of-year of the span (exclusive).
    pub end_doy: i32,
    /// Window length in days.
    pub window: u32,
    /// Samples with a larger fraction of empty windows are rejected.
    pub max_missing_fraction: f64,
}

impl Default for CompositeConfig {
    /// May to November with 5-day windows.
    fn default() -> Self {
        CompositeConfig {
            start_doy: 121,
            end_doy: 334,
            window: 5,
            max_missing_fraction: 0.4,
        }
    }
}

impl CompositeConfig {
    pub fn new(
        start_doy: i32,
        end_doy: i32,
        window: u32,
        max_missing_fraction: f64,
    ) -> Result<Self> {
        let cfg = CompositeConfig {
            start_doy,
            end_doy,
            window,
            max_missing_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_doy >= self.end_doy {
            return Err(Error::Config(format!(
                "span start {} must precede end {}",
                self.start_doy, self.end_doy
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least one day".into()));
        }
        if !(0.0..=1.0).contains(&self.max_missing_fraction) {
            return Err(Error::Config(format!(
                "max_missing_fraction {} outside [0, 1]",
                self.max_missing_fraction
            )));
        }
        if self.bins() < 2 {
            return Err(Error::Config(format!(
                "span {}..{} with window {} yields fewer than two bins",
                self.start_doy, self.end_doy, self.window
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> i32 {
        self.end_doy - self.start_doy
    }

    /// Number of windows, `ceil(span / window)`.
    pub fn bins(&self) -> usize {
        ceil_div(self.span(), self.window as i32) as usize
    }
}

pub(crate) fn ceil_div(a: i32, b: i32) -> i32 {
    debug_assert!(a >= 0 && b > 0);
    (a + b - 1) / b
}

/// Band-major composite: band `b` occupies `values[b*t .. (b+1)*t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MedianFeature1D {
    values: Vec<f64>,
    bins: usize,
}

impl MedianFeature1D {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % BAND_COUNT != 0 {
            return Err(Error::Shape(format!(
                "feature length {} is not a positive multiple of {BAND_COUNT}",
                values.len()
            )));
        }
        Ok(MedianFeature1D {
            bins: values.len() / BAND_COUNT,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Composite as a 10 x t matrix (rows are bands, columns are time bins).
#[derive(Clone, Debug, PartialEq)]
pub struct MedianFeature2D {
    data: Vec<f64>,
    bins: usize,
}

impl MedianFeature2D {
    pub fn zeros(bins: usize) -> Self {
        MedianFeature2D {
            data: vec![0.0; BAND_COUNT * bins],
            bins,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (BAND_COUNT, self.bins)
    }

    pub fn get(&self, band: usize, bin: usize) -> f64 {
        self.data[band * self.bins + bin]
    }

    pub fn set(&mut self, band: usize, bin: usize, value: f64) {
        self.data[band * self.bins + bin] = value;
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.data[band * self.bins..(band + 1) * self.bins]
    }

    /// Row-major view, identical to the band-major 1D layout.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn flatten(self) -> MedianFeature1D {
        MedianFeature1D {
            values: self.data,
            bins: self.bins,
        }
    }
}

/// Reshapes a band-major vector into its 10 x t matrix.
pub fn reshape_2d(f: MedianFeature1D) -> MedianFeature2D {
    MedianFeature2D {
        data: f.values,
        bins: f.bins,
    }
}

/// Like [`reshape_2d`] but starting from a raw vector.
pub fn reshape_values(values: Vec<f64>) -> Result<MedianFeature2D> {
    MedianFeature1D::from_values(values).map(reshape_2d)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Composites `bins` windows of `width` days starting at `start`; windows are
/// truncated at `end`, and windows starting at or after `end` stay empty.
pub(crate) fn composite_windows(
    series: &SpectralTimeSeries,
    start: i32,
    end: i32,
    width: i32,
    bins: usize,
    max_missing_fraction: f64,
) -> Result<MedianFeature1D> {
    debug_assert!(width > 0 && bins > 0);
    // Observations are sorted by doy, so each window is a contiguous run.
    let mut ranges: Vec<(usize, usize)> = vec![(0, 0); bins];
    let doys = series.doys();
    let mut cursor = doys.partition_point(|&d| d < start);
    for (i, range) in ranges.iter_mut().enumerate() {
        let lo = start + i as i32 * width;
        let hi = (lo + width).min(end);
        let first = cursor;
        while cursor < doys.len() && doys[cursor] < hi {
            cursor += 1;
        }
        if hi > lo {
            *range = (first, cursor);
        } else {
            *range = (cursor, cursor);
        }
    }

    let empty = ranges.iter().filter(|(a, b)| a == b).count();
    let empty_fraction = empty as f64 / bins as f64;
    if empty == bins || empty_fraction > max_missing_fraction {
        return Err(Error::Rejected { empty_fraction });
    }

    let refl = series.reflectance();
    let mut values = vec![0.0; BAND_COUNT * bins];
    let mut scratch = Vec::new();
    for band in 0..BAND_COUNT {
        let row = &mut values[band * bins..(band + 1) * bins];
        let mut filled = Vec::with_capacity(bins);
        for (i, &(a, b)) in ranges.iter().enumerate() {
            if a < b {
                scratch.clear();
                scratch.extend(refl[a..b].iter().map(|r| r[band]));
                row[i] = median_in_place(&mut scratch);
                filled.push(i);
            }
        }
        fill_gaps(row, &filled);
    }
    Ok(MedianFeature1D { values, bins })
}

/// Fills every index not in `filled` (sorted) from its neighbours.
fn fill_gaps(row: &mut [f64], filled: &[usize]) {
    let (first, last) = match (filled.first(), filled.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return,
    };
    for i in 0..first {
        row[i] = row[first];
    }
    for i in last + 1..row.len() {
        row[i] = row[last];
    }
    for pair in filled.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        let (a, b) = (row[l], row[r]);
        for i in l + 1..r {
            row[i] = a + (b - a) * ((i - l) as f64 / (r - l) as f64);
        }
    }
}

/// Windowed median composite over the configured span.
pub fn compose_median(
    series: &SpectralTimeSeries,
    cfg: &CompositeConfig,
) -> Result<MedianFeature1D> {
    cfg.validate()?;
    composite_windows(
        series,
        cfg.start_doy,
        cfg.end_doy,
        cfg.window as i32,
        cfg.bins(),
        cfg.max_missing_fraction,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    Ndvi,
    Gcvi,
}

/// NDVI `(B8 - B4) / (B8 + B4)` (0 when the denominator vanishes) or GCVI
/// `B8 / B3 - 1` (an error when B3 is zero).
pub fn vegetation_index(refl: &[f64], kind: IndexKind) -> Result<f64> {
    if refl.len() != BAND_COUNT {
        return Err(Error::Shape(format!(
            "expected {BAND_COUNT} bands, got {}",
            refl.len()
        )));
    }
    let nir = refl[Band::B8.index()];
    match kind {
        IndexKind::Ndvi => {
            let red = refl[Band::B4.index()];
            let den = nir + red;
            Ok(if den == 0.0 { 0.0 } else { (nir - red) / den })
        }
        IndexKind::Gcvi => {
            let green = refl[Band::B3.index()];
            if green == 0.0 {
                return Err(Error::NonPhysical(
                    "GCVI undefined for zero green reflectance".into(),
                ));
            }
            Ok(nir / green - 1.0)
        }
    }
}

/// Coefficients per series: intercept, then `(sin, cos)` pairs for k = 1, 2, 3.
pub const HARMONIC_TERMS: usize = 7;
pub const HARMONIC_SERIES: usize = 5;
pub const HARMONIC_LEN: usize = HARMONIC_TERMS * HARMONIC_SERIES;

/// Bands fitted before GCVI, in output order.
pub const HARMONIC_BANDS: [Band; 4] = [Band::B8A, Band::B11, Band::B12, Band::B8];

/// 35 harmonic regression coefficients, grouped 5 x 7 in the order
/// narrow NIR, SWIR 1, SWIR 2, NIR, GCVI.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicFeature {
    coeffs: Vec<f64>,
}

impl HarmonicFeature {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn series(&self, index: usize) -> &[f64] {
        &self.coeffs[index * HARMONIC_TERMS..(index + 1) * HARMONIC_TERMS]
    }
}

/// Ordinary least-squares fit of
/// `y(tau) = c0 + sum_k a_k sin(2 pi k tau / P) + b_k cos(2 pi k tau / P)`,
/// returning `[c0, a1, b1, a2, b2, a3, b3]`. Solved by QR.
pub fn fit_harmonics(taus: &[f64], ys: &[f64], period: f64) -> Result<[f64; HARMONIC_TERMS]> {
    if taus.len() != ys.len() {
        return Err(Error::Shape(format!(
            "{} abscissae, {} ordinates",
            taus.len(),
            ys.len()
        )));
    }
    if taus.len() < HARMONIC_TERMS {
        return Err(Error::InsufficientData {
            needed: HARMONIC_TERMS,
            found: taus.len(),
        });
    }
    let design = DMatrix::from_fn(taus.len(), HARMONIC_TERMS, |r, c| {
        harmonic_basis(taus[r], period, c)
    });
    let qr = design.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if diag_max == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * diag_max) {
        return Err(Error::SingularFit);
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(ys);
    let x = r.solve_upper_triangular(&qty).ok_or(Error::SingularFit)?;
    let mut out = [0.0; HARMONIC_TERMS];
    out.copy_from_slice(x.as_slice());
    Ok(out)
}

/// Column `c` of the harmonic design matrix at `tau`.
pub fn harmonic_basis(tau: f64, period: f64, c: usize) -> f64 {
    if c == 0 {
        return 1.0;
    }
    let k = ((c + 1) / 2) as f64;
    let phase = 2.0 * std::f64::consts::PI * k * tau / period;
    if c % 2 == 1 {
        phase.sin()
    } else {
        phase.cos()
    }
}

/// Third-order harmonic coefficients of narrow NIR, SWIR 1, SWIR 2, NIR and
/// GCVI over the raw observations inside the span, with `tau = doy - start`
/// and period equal to the span length.
pub fn harmonic_features(
    series: &SpectralTimeSeries,
    cfg: &CompositeConfig,
) -> Result<HarmonicFeature> {
    cfg.validate()?;
    let period = cfg.span() as f64;
    let in_span: Vec<(f64, &[f64; BAND_COUNT])> = series
        .observations()
        .filter(|(d, _)| *d >= cfg.start_doy && *d < cfg.end_doy)
        .map(|(d, r)| ((d - cfg.start_doy) as f64, r))
        .collect();
    if in_span.len() < HARMONIC_TERMS {
        return Err(Error::InsufficientData {
            needed: HARMONIC_TERMS,
            found: in_span.len(),
        });
    }
    let taus: Vec<f64> = in_span.iter().map(|(t, _)| *t).collect();
    let mut coeffs = Vec::with_capacity(HARMONIC_LEN);
    for band in HARMONIC_BANDS {
        let ys: Vec<f64> = in_span.iter().map(|(_, r)| r[band.index()]).collect();
        coeffs.extend_from_slice(&fit_harmonics(&taus, &ys, period)?);
    }
    // Observations with zero green reflectance leave the GCVI series only.
    let (gt, gy): (Vec<f64>, Vec<f64>) = in_span
        .iter()
        .filter_map(|(t, r)| {
            vegetation_index(&r[..], IndexKind::Gcvi)
                .ok()
                .map(|g| (*t, g))
        })
        .unzip();
    coeffs.extend_from_slice(&fit_harmonics(&gt, &gy, period)?);
    Ok(HarmonicFeature { coeffs })
}

/// Single-date (242) or two-date (484) hyperspectral vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperFeature {
    values: Vec<f64>,
}

impl HyperFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Passes a single date through or concatenates two dates as `a || b`.
pub fn concat_hyperspectral(a: &[f64], b: Option<&[f64]>) -> Result<HyperFeature> {
    let check = |v: &[f64]| {
        if v.len() == HYPER_BANDS {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "hyperspectral vector has length {}, expected {HYPER_BANDS}",
                v.len()
            )))
        }
    };
    check(a)?;
    let mut values = a.to_vec();
    if let Some(b) = b {
        check(b)?;
        values.extend_from_slice(b);
    }
    Ok(HyperFeature { values })
}

/// Writes a composite in long CSV form: `band,bin,value`.
pub fn write_feature_csv<W: Write>(f: &MedianFeature2D, mut w: W) -> Result<()> {
    writeln!(w, "band,bin,value")?;
    for band in Band::ALL {
        for (bin, v) in f.row(band.index()).iter().enumerate() {
            writeln!(w, "{},{},{}", band.name(), bin, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(doys: &[i32], value: impl Fn(i32, usize) -> f64) -> SpectralTimeSeries {
        let refl = doys
            .iter()
            .map(|&d| std::array::from_fn(|b| value(d, b)))
            .collect();
        SpectralTimeSeries::new(doys.to_vec(), refl).unwrap()
    }

    #[test]
    fn bin_count_follows_ceiling() {
        let cfg = CompositeConfig::default();
        assert_eq!(cfg.bins(), 43);
        let s = series(&(121..334).step_by(2).collect::<Vec<_>>(), |_, _| 0.1);
        assert_eq!(compose_median(&s, &cfg).unwrap().len(), 430);
        assert!(CompositeConfig::new(10, 10, 5, 0.4).is_err());
        assert!(CompositeConfig::new(10, 14, 5, 0.4).is_err());
        assert!(CompositeConfig::new(10, 20, 0, 0.4).is_err());
    }

    #[test]
    fn bin_medians() {
        let cfg = CompositeConfig::new(1, 11, 5, 0.5).unwrap();
        let obs = [(1, 0.2), (2, 0.4), (6, 0.1), (7, 0.9), (8, 0.2)];
        let doys: Vec<i32> = obs.iter().map(|o| o.0).collect();
        let s = series(&doys, |d, _| obs.iter().find(|o| o.0 == d).unwrap().1);
        let f = compose_median(&s, &cfg).unwrap();
        assert!((f.values()[0] - 0.3).abs() < 1e-15);
        assert_eq!(f.values()[1], 0.2);
    }

    #[test]
    fn gaps_interpolate_and_edges_extend() {
        // Bins: [1,3) [3,5) [5,7) [7,9) [9,11); observations in bins 1 and 3.
        let cfg = CompositeConfig::new(1, 11, 2, 0.7).unwrap();
        let s = series(&[3, 7], |d, _| if d == 3 { 0.2 } else { 0.6 });
        let f = compose_median(&s, &cfg).unwrap();
        let row = &f.values()[..5];
        assert_eq!(row[0], 0.2);
        assert_eq!(row[1], 0.2);
        assert!((row[2] - 0.4).abs() < 1e-15);
        assert_eq!(row[3], 0.6);
        assert_eq!(row[4], 0.6);
    }

    #[test]
    fn too_many_gaps_rejected_with_fraction() {
        let cfg = CompositeConfig::new(1, 11, 2, 0.4).unwrap();
        let s = series(&[3, 7], |_, _| 0.1);
        match compose_median(&s, &cfg) {
            Err(Error::Rejected { empty_fraction }) => {
                assert!((empty_fraction - 0.6).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
        let none = series(&[200], |_, _| 0.1);
        assert!(matches!(
            compose_median(&none, &CompositeConfig { max_missing_fraction: 1.0, ..cfg }),
            Err(Error::Rejected { empty_fraction }) if empty_fraction == 1.0
        ));
    }

    #[test]
    fn last_bin_is_truncated() {
        // 121..334 with d = 5: the last window is [331, 334).
        let cfg = CompositeConfig {
            max_missing_fraction: 1.0,
            ..Default::default()
        };
        let s = series(&[331, 334], |d, _| if d == 331 { 0.5 } else { 0.9 });
        let f = compose_median(&s, &cfg).unwrap();
        assert!(f.values()[..43].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn reshape_index_arithmetic() {
        let t = 43;
        let f = MedianFeature1D::from_values((0..10 * t).map(|v| v as f64).collect()).unwrap();
        let m = reshape_2d(f.clone());
        assert_eq!(m.shape(), (10, 43));
        assert_eq!(m.get(2, 5), (2 * t + 5) as f64);
        assert_eq!(m.flatten(), f);
        assert!(reshape_values(vec![0.0; 431]).is_err());
    }

    #[test]
    fn vegetation_indices() {
        let mut r = [0.1; 10];
        r[Band::B8.index()] = 0.6;
        r[Band::B4.index()] = 0.2;
        assert!((vegetation_index(&r, IndexKind::Ndvi).unwrap() - 0.5).abs() < 1e-15);
        r[Band::B8.index()] = 0.5;
        r[Band::B3.index()] = 0.25;
        assert_eq!(vegetation_index(&r, IndexKind::Gcvi).unwrap(), 1.0);
        r[Band::B4.index()] = 0.5;
        assert_eq!(vegetation_index(&r, IndexKind::Ndvi).unwrap(), 0.0);
        let zero = [0.0; 10];
        assert_eq!(vegetation_index(&zero, IndexKind::Ndvi).unwrap(), 0.0);
        assert!(matches!(
            vegetation_index(&zero, IndexKind::Gcvi),
            Err(Error::NonPhysical(_))
        ));
        assert!(matches!(
            vegetation_index(&[0.1; 9], IndexKind::Ndvi),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn constant_series_fits_intercept_only() {
        let doys: Vec<i32> = (121..334).step_by(7).collect();
        let s = series(&doys, |_, b| if b == Band::B3.index() { 0.2 } else { 0.3 });
        let h = harmonic_features(&s, &CompositeConfig::default()).unwrap();
        assert_eq!(h.coeffs().len(), 35);
        for k in 0..4 {
            let c = h.series(k);
            assert!((c[0] - 0.3).abs() < 1e-10);
            assert!(c[1..].iter().all(|v| v.abs() < 1e-10));
        }
        // GCVI = 0.3 / 0.2 - 1.
        assert!((h.series(4)[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn harmonic_needs_seven_observations() {
        let s = series(&[130, 140, 150, 160, 170, 180], |_, _| 0.3);
        assert!(matches!(
            harmonic_features(&s, &CompositeConfig::default()),
            Err(Error::InsufficientData {
                needed: 7,
                found: 6
            })
        ));
    }

    #[test]
    fn degenerate_design_is_singular() {
        // Seven observations spaced by half the period alias the harmonics.
        let taus: Vec<f64> = (0..7).map(|i| (i * 100) as f64).collect();
        let ys = vec![0.1; 7];
        assert!(matches!(
            fit_harmonics(&taus, &ys, 200.0),
            Err(Error::SingularFit)
        ));
    }

    #[test]
    fn gcvi_drops_zero_green_observations_only() {
        let doys: Vec<i32> = (121..334).step_by(10).collect();
        let s = series(&doys, |d, b| {
            if b == Band::B3.index() && d == 131 {
                0.0
            } else {
                0.3
            }
        });
        let h = harmonic_features(&s, &CompositeConfig::default()).unwrap();
        assert!((h.series(4)[0]).abs() < 1e-10);
    }

    #[test]
    fn hyperspectral_concatenation() {
        let a = vec![0.1; 242];
        let b: Vec<f64> = (0..242).map(|i| i as f64).collect();
        assert_eq!(concat_hyperspectral(&a, None).unwrap().len(), 242);
        let ab = concat_hyperspectral(&a, Some(&b)).unwrap();
        assert_eq!(ab.len(), 484);
        assert_eq!(&ab.values()[..242], &a[..]);
        assert_ne!(ab, concat_hyperspectral(&b, Some(&a)).unwrap());
        assert!(concat_hyperspectral(&a[..100], None).is_err());
        assert!(concat_hyperspectral(&a, Some(&b[..10])).is_err());
    }

    #[test]
    fn csv_is_long_format() {
        let mut m = MedianFeature2D::zeros(2);
        m.set(9, 1, 0.5);
        let mut out = Vec::new();
        write_feature_csv(&m, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "band,bin,value");
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[20], "B12,1,0.5");
    }
}
