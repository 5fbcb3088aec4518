use cropnet_core::data::{Dataset, LabelSchema};
use cropnet_core::eval::{run_in_region, run_transfer, Experiment, FeatureKind};
use cropnet_core::synth::{default_templates, generate_region, RegionConfig};

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

fn generate(cfg: &RegionConfig, seed: u64) -> Dataset {
    generate_region(&default_templates(), &LabelSchema::crop_globe(), cfg, seed).unwrap()
}

#[test]
fn reflectance_stays_in_range() {
    let cfg = RegionConfig {
        noise: 0.3,
        amplitude: 1.6,
        ..Default::default()
    };
    let ds = generate(&cfg, 12);
    for s in &ds.samples {
        for r in s.series.reflectance() {
            assert!(r.iter().all(|v| (0.0..=1.5).contains(v)), "{}: {r:?}", s.id);
        }
    }
}

#[test]
fn growing_shift_never_helps_transfer() {
    let source = generate(&RegionConfig::default(), 101);
    let exp = Experiment::desk(FeatureKind::Harmonic);
    let oa: Vec<f64> = [0.0, 5.0, 10.0, 15.0]
        .iter()
        .map(|&shift| {
            let target = generate(
                &RegionConfig {
                    name: "TGT".into(),
                    shift_days: shift,
                    ..Default::default()
                },
                202,
            );
            run_transfer(&source, &target, &exp, &SEEDS)
                .unwrap()
                .oa_mean
        })
        .collect();
    assert!(oa.windows(2).all(|w| w[1] <= w[0]), "{oa:?}");
}

#[test]
fn identical_regions_transfer_like_in_region() {
    let quiet = RegionConfig {
        noise: 0.0,
        ..Default::default()
    };
    let source = generate(&quiet, 101);
    let target = generate(
        &RegionConfig {
            name: "TGT".into(),
            ..quiet.clone()
        },
        202,
    );
    let exp = Experiment::desk(FeatureKind::Median2d);
    let transfer = run_transfer(&source, &target, &exp, &SEEDS).unwrap();
    let in_region = run_in_region(&source, &exp, 0.8, &SEEDS).unwrap();
    assert!(
        (transfer.oa_mean - in_region.oa_mean).abs() <= 2.0,
        "transfer {} vs in-region {}",
        transfer.oa_mean,
        in_region.oa_mean
    );
}
