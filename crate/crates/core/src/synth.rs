//! Double-logistic phenology generator for desk-scale experiments.
//!
//! Each pixel mixes a vegetation and a soil endmember by canopy fraction
//! `f(doy)`, is observed on a revisit grid with random cloud gaps, and gets
//! Gaussian reflectance noise. Regions differ by a phenology shift `delta`,
//! an amplitude scale `lambda` and optional timing sub-populations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    Band, Dataset, LabelSchema, Sample, SpectralTimeSeries, BAND_COUNT, HYPER_BANDS,
    MAX_REFLECTANCE,
};
use crate::error::{Error, Result};
use crate::features::{compose_median, CompositeConfig};
use crate::rng::{self, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropTemplate {
    pub class: usize,
    pub green_up: f64,
    pub senescence: f64,
    pub growth_rate: f64,
    pub decay_rate: f64,
    pub peak: f64,
    pub vegetation: [f64; BAND_COUNT],
    pub soil: [f64; BAND_COUNT],
}

impl CropTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.green_up < self.senescence) {
            return Err(Error::Config(format!(
                "class {}: green-up must precede senescence",
                self.class
            )));
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::Config(format!(
                "class {}: peak canopy {} outside (0, 1]",
                self.class, self.peak
            )));
        }
        if !(self.growth_rate > 0.0 && self.decay_rate > 0.0) {
            return Err(Error::Config(format!(
                "class {}: rates must be positive",
                self.class
            )));
        }
        if self
            .vegetation
            .iter()
            .chain(&self.soil)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Config(format!(
                "class {}: endmembers outside [0, 1]",
                self.class
            )));
        }
        Ok(())
    }
}

/// Bare soil: flat 0.15 with a lift in the two SWIR bands.
pub const SOIL: [f64; BAND_COUNT] = [0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15, 0.26, 0.23];

// Band order: B2 B3 B4 B8 B5 B6 B7 B8A B11 B12.
fn leaf(
    red: f64,
    green: f64,
    red_edge: f64,
    nir: f64,
    swir1: f64,
    swir2: f64,
) -> [f64; BAND_COUNT] {
    [
        0.03,
        green,
        red,
        nir,
        red_edge,
        0.55 * nir + 0.45 * red_edge,
        0.9 * nir,
        nir * 1.02,
        swir1,
        swir2,
    ]
}

/// Seven classes in [`LabelSchema::crop_globe`] order: corn, soybeans,
/// rice, wheat, sugarcane, cotton, other.
///
/// Corn and soybeans share a calendar and differ only in red and red-edge.
/// Cotton has the soybean spectrum but greens up 20 days later, with
/// sharper transitions and a lower peak.
pub fn default_templates() -> Vec<CropTemplate> {
    let t = |class, g, s, r1, r2, a, veg, soil| CropTemplate {
        class,
        green_up: g,
        senescence: s,
        growth_rate: r1,
        decay_rate: r2,
        peak: a,
        vegetation: veg,
        soil,
    };
    let flooded = [0.08, 0.08, 0.07, 0.06, 0.07, 0.06, 0.06, 0.06, 0.04, 0.03];
    vec![
        t(
            0,
            165.0,
            250.0,
            0.12,
            0.10,
            0.95,
            leaf(0.03, 0.08, 0.10, 0.50, 0.22, 0.11),
            SOIL,
        ),
        t(
            1,
            165.0,
            250.0,
            0.12,
            0.10,
            0.95,
            leaf(0.09, 0.08, 0.25, 0.50, 0.22, 0.11),
            SOIL,
        ),
        t(
            2,
            160.0,
            245.0,
            0.10,
            0.10,
            0.90,
            leaf(0.03, 0.09, 0.12, 0.40, 0.20, 0.10),
            flooded,
        ),
        t(
            3,
            100.0,
            185.0,
            0.12,
            0.12,
            0.85,
            leaf(0.03, 0.07, 0.11, 0.42, 0.27, 0.15),
            SOIL,
        ),
        t(
            4,
            140.0,
            320.0,
            0.08,
            0.08,
            0.85,
            leaf(0.03, 0.08, 0.13, 0.48, 0.20, 0.09),
            SOIL,
        ),
        t(
            5,
            185.0,
            270.0,
            0.30,
            0.30,
            0.82,
            leaf(0.09, 0.08, 0.25, 0.50, 0.22, 0.11),
            SOIL,
        ),
        t(
            6,
            150.0,
            280.0,
            0.06,
            0.06,
            0.40,
            leaf(0.03, 0.06, 0.09, 0.33, 0.27, 0.16),
            SOIL,
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    /// Region code, also written as each sample's country.
    pub name: String,
    /// Phenology shift in days, added to green-up and senescence.
    pub shift_days: f64,
    /// Canopy amplitude scale.
    pub amplitude: f64,
    /// Days between acquisitions before cloud gaps.
    pub cadence: u32,
    pub gap_prob: f64,
    /// Reflectance noise standard deviation.
    pub noise: f64,
    pub samples_per_class: Vec<usize>,
    /// Timing offsets (days) of the sub-populations; each sample picks one uniformly.
    pub subpopulations: Vec<f64>,
    /// Per-sample standard deviation of the timing offset, in days.
    pub timing_jitter: f64,
    /// Per-sample standard deviation of a multiplicative amplitude factor.
    pub amplitude_jitter: f64,
    pub center: (f64, f64),
    /// Acquisition dates of hyperspectral snapshots (at most two).
    pub hyper_doys: Vec<i32>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            name: "SRC".into(),
            shift_days: 0.0,
            amplitude: 1.0,
            cadence: 2,
            gap_prob: 0.3,
            noise: 0.01,
            samples_per_class: vec![40; 7],
            subpopulations: vec![-8.0, 0.0, 8.0],
            timing_jitter: 3.0,
            amplitude_jitter: 0.05,
            center: (0.0, 0.0),
            hyper_doys: Vec::new(),
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cadence < 1 {
            return Err(Error::Config("cadence must be at least one day".into()));
        }
        if !(0.0..=1.0).contains(&self.gap_prob) {
            return Err(Error::Config(format!(
                "gap probability {} outside [0, 1]",
                self.gap_prob
            )));
        }
        if !(self.noise >= 0.0 && self.timing_jitter >= 0.0 && self.amplitude_jitter >= 0.0) {
            return Err(Error::Config(
                "noise and jitter must be non-negative".into(),
            ));
        }
        if !(self.amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "amplitude {} must be non-negative",
                self.amplitude
            )));
        }
        if self.samples_per_class.iter().all(|&n| n == 0) {
            return Err(Error::Config("region has no samples".into()));
        }
        if self.subpopulations.is_empty() {
            return Err(Error::Config("need at least one sub-population".into()));
        }
        if self.hyper_doys.len() > 2 || self.hyper_doys.iter().any(|d| !(1..=365).contains(d)) {
            return Err(Error::Config(
                "hyper_doys takes at most two days of year in 1..=365".into(),
            ));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn canopy(t: &CropTemplate, lambda: f64, delta: f64, doy: f64) -> f64 {
    let up = logistic(t.growth_rate * (doy - (t.green_up + delta)));
    let down = logistic(t.decay_rate * (doy - (t.senescence + delta)));
    (lambda * t.peak * (up - down)).clamp(0.0, 1.0)
}

/// Canopy fraction at `doy` under the region's shift and amplitude.
pub fn phenology_curve(t: &CropTemplate, region: &RegionConfig, doy: f64) -> f64 {
    canopy(t, region.amplitude, region.shift_days, doy)
}

/// Linear mixture of the template's endmembers.
pub fn mix(t: &CropTemplate, f: f64) -> [f64; BAND_COUNT] {
    let mut r = [0.0; BAND_COUNT];
    for b in 0..BAND_COUNT {
        r[b] = f * t.vegetation[b] + (1.0 - f) * t.soil[b];
    }
    r
}

/// Wavelength grid of the hyperspectral vectors, 400-2500 nm.
pub fn hyper_wavelengths() -> Vec<f64> {
    (0..HYPER_BANDS)
        .map(|i| 400.0 + 2100.0 * i as f64 / (HYPER_BANDS - 1) as f64)
        .collect()
}

/// Piecewise-linear interpolation of a 10-band spectrum onto the
/// hyperspectral grid, flat beyond the outermost band centres.
pub fn interpolate_spectrum(bands: &[f64; BAND_COUNT]) -> Vec<f64> {
    let mut pts: Vec<(f64, f64)> = Band::ALL
        .iter()
        .map(|b| (b.wavelength_nm(), bands[b.index()]))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    hyper_wavelengths()
        .into_iter()
        .map(|w| {
            if w <= pts[0].0 {
                return pts[0].1;
            }
            for p in pts.windows(2) {
                if w <= p[1].0 {
                    let u = (w - p[0].0) / (p[1].0 - p[0].0);
                    return p[0].1 + u * (p[1].1 - p[0].1);
                }
            }
            pts[pts.len() - 1].1
        })
        .collect()
}

fn generate_sample(
    t: &CropTemplate,
    region: &RegionConfig,
    seed: u64,
    index: usize,
) -> Result<(SpectralTimeSeries, Option<Vec<f64>>, (f64, f64))> {
    let mut r = rng::stream(seed, Tag::Synth, &[index as u64]);
    let sub = region.subpopulations[r.gen_range(0..region.subpopulations.len())];
    let jitter = Normal::new(0.0, region.timing_jitter)
        .expect("non-negative std")
        .sample(&mut r);
    let amp = Normal::new(1.0, region.amplitude_jitter)
        .expect("non-negative std")
        .sample(&mut r)
        .max(0.0);
    let delta = region.shift_days + sub + jitter;
    let lambda = region.amplitude * amp;
    let lon = region.center.0 + r.gen_range(-0.5..0.5);
    let lat = region.center.1 + r.gen_range(-0.5..0.5);
    let noise = Normal::new(0.0, region.noise).expect("non-negative std");
    let noisy =
        |clean: f64, r: &mut rng::Rng| (clean + noise.sample(r)).clamp(0.0, MAX_REFLECTANCE);

    let phase = r.gen_range(1..=region.cadence as i32);
    let mut doys = Vec::new();
    let mut refl = Vec::new();
    let mut doy = phase;
    while doy <= 365 {
        let keep = !r.gen_bool(region.gap_prob);
        let clean = mix(t, canopy(t, lambda, delta, doy as f64));
        let mut row = [0.0; BAND_COUNT];
        for b in 0..BAND_COUNT {
            row[b] = noisy(clean[b], &mut r);
        }
        if keep {
            doys.push(doy);
            refl.push(row);
        }
        doy += region.cadence as i32;
    }
    let hyper = if region.hyper_doys.is_empty() {
        None
    } else {
        let mut v = Vec::with_capacity(region.hyper_doys.len() * HYPER_BANDS);
        for &d in &region.hyper_doys {
            let spectrum = interpolate_spectrum(&mix(t, canopy(t, lambda, delta, d as f64)));
            v.extend(spectrum.into_iter().map(|x| noisy(x, &mut r)));
        }
        Some(v)
    };
    Ok((SpectralTimeSeries::new(doys, refl)?, hyper, (lon, lat)))
}

/// Generates every sample of a region, deterministic per `(seed, index)`.
/// Samples are ordered by class, then index.
pub fn generate_region(
    templates: &[CropTemplate],
    schema: &LabelSchema,
    region: &RegionConfig,
    seed: u64,
) -> Result<Dataset> {
    region.validate()?;
    if region.samples_per_class.len() != templates.len() {
        return Err(Error::Config(format!(
            "{} sample counts for {} templates",
            region.samples_per_class.len(),
            templates.len()
        )));
    }
    for t in templates {
        t.validate()?;
        if t.class >= schema.len() {
            return Err(Error::Config(format!(
                "template class {} outside the schema",
                t.class
            )));
        }
    }
    let mut ds = Dataset::new(schema.clone(), region.name.clone());
    let mut index = 0;
    for (t, &count) in templates.iter().zip(&region.samples_per_class) {
        for _ in 0..count {
            let (series, hyper, (lon, lat)) = generate_sample(t, region, seed, index)?;
            ds.samples.push(Sample {
                id: format!("{}-{index:05}", region.name),
                lon,
                lat,
                country: region.name.clone(),
                label: t.class,
                series,
                hyper,
            });
            index += 1;
        }
    }
    let composite = CompositeConfig::default();
    if ds
        .samples
        .iter()
        .all(|s| compose_median(&s.series, &composite).is_err())
    {
        return Err(Error::Validation(format!(
            "observations too sparse: no sample of region {} survives compositing",
            region.name
        )));
    }
    Ok(ds)
}
