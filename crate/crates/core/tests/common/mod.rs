//! Independent reference implementations and generators shared by the
//! integration tests.
#![allow(dead_code)]

use cropnet_core::data::{SpectralTimeSeries, BAND_COUNT};
use cropnet_core::features::CompositeConfig;
use rand::seq::index::sample;
use rand::Rng;

/// Outcome of the brute-force compositor.
#[derive(Debug, PartialEq)]
pub enum OracleComposite {
    Rejected,
    /// Band-major values plus the per-bin "had an observation" flags.
    Values(Vec<f64>, Vec<bool>),
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Direct transcription of the compositing rules: scan every observation for
/// every bin, then fill each empty bin from its nearest filled neighbours.
pub fn oracle_composite(series: &SpectralTimeSeries, cfg: &CompositeConfig) -> OracleComposite {
    let span = cfg.end_doy - cfg.start_doy;
    let w = cfg.window as i32;
    let t = ((span + w - 1) / w) as usize;
    let mut bins: Vec<Vec<[f64; BAND_COUNT]>> = vec![Vec::new(); t];
    for (i, bin) in bins.iter_mut().enumerate() {
        let lo = cfg.start_doy + i as i32 * w;
        let hi = (lo + w).min(cfg.end_doy);
        for (d, r) in series.observations() {
            if d >= lo && d < hi {
                bin.push(*r);
            }
        }
    }
    let filled: Vec<bool> = bins.iter().map(|b| !b.is_empty()).collect();
    let empty = filled.iter().filter(|f| !**f).count();
    if empty == t || empty as f64 / t as f64 > cfg.max_missing_fraction {
        return OracleComposite::Rejected;
    }
    let mut out = vec![0.0; BAND_COUNT * t];
    for band in 0..BAND_COUNT {
        let raw: Vec<Option<f64>> = bins
            .iter()
            .map(|b| (!b.is_empty()).then(|| median(b.iter().map(|r| r[band]).collect())))
            .collect();
        for i in 0..t {
            let v = match raw[i] {
                Some(v) => v,
                None => {
                    let left = (0..i).rev().find(|&j| raw[j].is_some());
                    let right = (i + 1..t).find(|&j| raw[j].is_some());
                    match (left, right) {
                        (Some(l), Some(r)) => {
                            let (a, b) = (raw[l].unwrap(), raw[r].unwrap());
                            a + (b - a) * ((i - l) as f64 / (r - l) as f64)
                        }
                        (Some(l), None) => raw[l].unwrap(),
                        (None, Some(r)) => raw[r].unwrap(),
                        (None, None) => unreachable!(),
                    }
                }
            };
            out[band * t + i] = v;
        }
    }
    OracleComposite::Values(out, filled)
}

/// Random valid composite configuration (at least two bins).
pub fn random_config<R: Rng>(rng: &mut R) -> CompositeConfig {
    loop {
        let start = rng.gen_range(1..300);
        let end = rng.gen_range(start + 2..=366.min(start + 220));
        let window = rng.gen_range(1..=31);
        let frac = *[0.0, 0.2, 0.4, 0.4, 0.6, 1.0]
            .get(rng.gen_range(0..6))
            .unwrap();
        if let Ok(c) = CompositeConfig::new(start, end, window, frac) {
            return c;
        }
    }
}

/// Random series around the configured span. Observation counts range from
/// none to dense, so rejections, interior gaps and edge gaps all occur.
pub fn random_series<R: Rng>(rng: &mut R, cfg: &CompositeConfig) -> SpectralTimeSeries {
    let lo = (cfg.start_doy - 15).max(1);
    let hi = (cfg.end_doy + 15).min(365);
    let pool = (hi - lo + 1) as usize;
    let cap = rng.gen_range(1..=90);
    let n = rng.gen_range(0..=pool.min(cap));
    let mut doys: Vec<i32> = sample(rng, pool, n)
        .into_iter()
        .map(|i| lo + i as i32)
        .collect();
    doys.sort_unstable();
    let refl = doys
        .iter()
        .map(|_| {
            let mut r = [0.0; BAND_COUNT];
            for v in &mut r {
                // Coarse values make equal medians and ties likely.
                *v = if rng.gen_bool(0.3) {
                    rng.gen_range(0..4) as f64 * 0.25
                } else {
                    rng.gen_range(0.0..1.0)
                };
            }
            r
        })
        .collect();
    SpectralTimeSeries::new(doys, refl).unwrap()
}
