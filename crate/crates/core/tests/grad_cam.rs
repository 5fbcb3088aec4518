use cropnet_core::cropnet::{
    predict_batched, train, CropNet, FeatureSet, ImportanceMap, TrainHyper,
};
use cropnet_core::data::BAND_COUNT;
use cropnet_core::eval::{network_config, FeatureKind};
use cropnet_core::features::{reshape_values, CompositeConfig};
use cropnet_core::rng::{self, Tag};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Noise everywhere; the two classes differ only by where a bump sits on
/// row `band`.
fn planted(band: usize, seed: u64, n: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
    let bins = CompositeConfig::default().bins();
    let mut r = rng::stream(seed, Tag::Test, &[30]);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let centre = if class == 0 { 12.0 } else { 30.0 } + r.gen_range(-2.0..2.0);
        let mut f: Vec<f32> = (0..BAND_COUNT * bins)
            .map(|_| noise.sample(&mut r) as f32)
            .collect();
        for j in 0..bins {
            let bump = 1.0 * (-((j as f64 - centre) / 3.0).powi(2)).exp();
            f[band * bins + j] += bump as f32;
        }
        features.push(f);
        labels.push(class);
    }
    (features, labels)
}

fn dominant_band(band: usize, seed: u64) -> usize {
    let composite = CompositeConfig::default();
    let (features, labels) = planted(band, seed, 200);
    let cfg = network_config(
        FeatureKind::Median2d,
        &composite,
        0,
        [8, 16, 16, 32],
        0.0,
        2,
    );
    let mut net = CropNet::<f32>::build(cfg, seed).unwrap();
    let data = FeatureSet::new(features.clone(), labels.clone()).unwrap();
    let hyper = TrainHyper {
        lr: 3e-3,
        batch_size: 32,
        epochs: 10,
    };
    train(&mut net, &data, &hyper, seed).unwrap();
    let probs = predict_batched(&net, &features, 64).unwrap();
    let mut maps = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let row = probs.row(i);
        let pred = if row[1] > row[0] { 1 } else { 0 };
        if pred != labels[i] {
            continue;
        }
        let f2 = reshape_values(f.iter().map(|&v| v as f64).collect()).unwrap();
        maps.push(net.grad_cam(&f2, pred).unwrap());
    }
    assert!(
        maps.len() > 150,
        "model failed to learn the planted signal ({} correct)",
        maps.len()
    );
    ImportanceMap::mean(&maps).unwrap().dominant_row()
}

/// One run per band: the planted row must carry the largest total relevance.
#[test]
fn planted_band_dominates_the_map() {
    let found: Vec<(usize, usize)> = (0..BAND_COUNT)
        .map(|band| (band, dominant_band(band, band as u64 + 1)))
        .collect();
    let hits = found.iter().filter(|(b, d)| b == d).count();
    assert!(
        hits >= 8,
        "planted band recovered in {hits}/10 runs (planted, dominant): {found:?}"
    );
}
