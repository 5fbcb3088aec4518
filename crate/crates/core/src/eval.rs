//! Metrics and the seeded train-on-source, test-on-target protocol.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::cropnet::{
    predict_batched, train, AugmentedSet, CropNet, CropNetConfig, EpochStats, FeatureSet,
    SeriesItem, TrainHyper, TrainingSet,
};
use crate::data::{
    align_evaluation, split_indices, ClassAlignmentRule, Dataset, Sample, BAND_COUNT,
};
use crate::error::{Error, Result};
use crate::features::{compose_median, harmonic_features, CompositeConfig, HARMONIC_LEN};

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::zeros(k);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::Validation(format!(
                    "label pair ({t}, {p}) outside {k} classes"
                )));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape("confusion matrices differ in size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Recall per class, `None` for classes with no ground-truth samples.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, classes: &[String], mut w: W) -> Result<()> {
        write!(w, "truth\\pred")?;
        for c in classes {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows().iter().enumerate() {
            write!(w, "{}", classes.get(i).map(String::as_str).unwrap_or("?"))?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent.
    pub oa: f64,
    /// Percent, over classes present in truth or prediction.
    pub mf1: f64,
    /// Per-class F1 in `[0, 1]`; `None` for classes absent from both.
    pub f1: Vec<Option<f64>>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("empty confusion matrix".into()));
    }
    let f1: Vec<Option<f64>> = (0..cm.classes())
        .map(|i| {
            let (tp, rows, cols) = (cm.get(i, i) as f64, cm.row_sum(i), cm.col_sum(i));
            if rows == 0 && cols == 0 {
                return None;
            }
            let p = if cols > 0 { tp / cols as f64 } else { 0.0 };
            let r = if rows > 0 { tp / rows as f64 } else { 0.0 };
            Some(if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            })
        })
        .collect();
    let present: Vec<f64> = f1.iter().flatten().copied().collect();
    Ok(Metrics {
        oa: 100.0 * cm.trace() as f64 / total as f64,
        mf1: 100.0 * present.iter().sum::<f64>() / present.len() as f64,
        f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Median1d,
    Median2d,
    Harmonic,
    Hyper,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Median1d => "median1d",
            FeatureKind::Median2d => "median2d",
            FeatureKind::Harmonic => "harmonic",
            FeatureKind::Hyper => "hyper",
        }
    }

    pub fn is_median(self) -> bool {
        matches!(self, FeatureKind::Median1d | FeatureKind::Median2d)
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median1d" => Ok(FeatureKind::Median1d),
            "median2d" => Ok(FeatureKind::Median2d),
            "harmonic" => Ok(FeatureKind::Harmonic),
            "hyper" => Ok(FeatureKind::Hyper),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// Flat feature vector of one sample. Composite rejections, under-determined
/// harmonic fits and missing hyperspectral vectors surface as errors the
/// caller counts as rejections.
pub fn featurize(
    sample: &Sample,
    kind: FeatureKind,
    composite: &CompositeConfig,
) -> Result<Vec<f32>> {
    let to32 = |v: &[f64]| v.iter().map(|x| *x as f32).collect();
    match kind {
        FeatureKind::Median1d | FeatureKind::Median2d => {
            Ok(to32(compose_median(&sample.series, composite)?.values()))
        }
        FeatureKind::Harmonic => Ok(to32(harmonic_features(&sample.series, composite)?.coeffs())),
        FeatureKind::Hyper => sample.hyper.as_deref().map(to32).ok_or_else(|| {
            Error::Validation(format!("sample {} has no hyperspectral vector", sample.id))
        }),
    }
}

fn is_rejection(e: &Error) -> bool {
    matches!(
        e,
        Error::Rejected { .. }
            | Error::InsufficientData { .. }
            | Error::SingularFit
            | Error::Validation(_)
    )
}

/// Network configuration for a feature kind. `hyper_len` is the length of
/// the hyperspectral vectors (242 or 484).
pub fn network_config(
    kind: FeatureKind,
    composite: &CompositeConfig,
    hyper_len: usize,
    widths: [usize; 4],
    dropout: f64,
    n_classes: usize,
) -> CropNetConfig {
    let mut cfg = match kind {
        FeatureKind::Median2d => CropNetConfig::two_d(composite.bins(), n_classes),
        FeatureKind::Median1d => CropNetConfig::one_d(BAND_COUNT * composite.bins(), n_classes),
        FeatureKind::Harmonic => CropNetConfig::one_d(HARMONIC_LEN, n_classes),
        FeatureKind::Hyper => CropNetConfig::one_d(hyper_len, n_classes),
    };
    cfg.widths = widths;
    cfg.dropout = dropout;
    cfg
}

/// Everything that defines one experiment apart from data and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub feature: FeatureKind,
    pub composite: CompositeConfig,
    pub augmentation: Option<AugmentationConfig>,
    pub widths: [usize; 4],
    pub dropout: f64,
    pub train: TrainHyper,
    pub rule: ClassAlignmentRule,
    /// Count rejected target samples as misclassified in OA.
    pub strict: bool,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            name: "transfer".into(),
            feature: FeatureKind::Median2d,
            composite: CompositeConfig::default(),
            augmentation: None,
            widths: [64, 128, 256, 512],
            dropout: 0.1,
            train: TrainHyper::default(),
            rule: ClassAlignmentRule::identity(),
            strict: false,
        }
    }
}

impl Experiment {
    /// Narrow widths and the short schedule of [`TrainHyper::desk`].
    pub fn desk(feature: FeatureKind) -> Self {
        Experiment {
            feature,
            widths: [16, 32, 64, 128],
            train: TrainHyper::desk(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.composite.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
            if !self.feature.is_median() {
                return Err(Error::Config(
                    "augmentation applies to median features only".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub oa: f64,
    pub mf1: f64,
    pub train_samples: usize,
    pub evaluated: usize,
    /// Aligned-away rows of a drop-classes rule.
    pub excluded: usize,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub experiment: String,
    pub source_region: String,
    pub target_region: String,
    pub feature: FeatureKind,
    pub augmented: bool,
    pub strict: bool,
    pub classes: Vec<String>,
    pub seed_count: usize,
    pub seeds: Vec<SeedResult>,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub mf1_mean: f64,
    pub mf1_std: f64,
    pub confusion: ConfusionMatrix,
    pub recall: Vec<Option<f64>>,
    pub source_rejected: usize,
    pub target_rejected: usize,
    /// Rejected fraction of the evaluation samples.
    pub target_rejection_rate: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvaluationReport {
    pub fn oa_values(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.oa).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `experiment,feature,seed,oa,mf1` rows.
    pub fn write_summary_csv<W: Write>(reports: &[&EvaluationReport], mut w: W) -> Result<()> {
        writeln!(w, "experiment,feature,seed,oa,mf1")?;
        for r in reports {
            for s in &r.seeds {
                writeln!(
                    w,
                    "{},{},{},{:.6},{:.6}",
                    r.experiment,
                    r.feature.name(),
                    s.seed,
                    s.oa,
                    s.mf1
                )?;
            }
        }
        Ok(())
    }
}

/// Features of every sample of a dataset, `None` where rejected.
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub features: Vec<Option<Vec<f32>>>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a Dataset, exp: &Experiment) -> Result<Self> {
        let mut features = Vec::with_capacity(dataset.len());
        for s in &dataset.samples {
            match featurize(s, exp.feature, &exp.composite) {
                Ok(f) => features.push(Some(f)),
                Err(e) if is_rejection(&e) => {
                    log::debug!("sample {} rejected: {e}", s.id);
                    features.push(None)
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Prepared { dataset, features })
    }

    pub fn rejected(&self, idx: &[usize]) -> usize {
        idx.iter().filter(|&&i| self.features[i].is_none()).count()
    }

    fn feature_len(&self) -> Option<usize> {
        self.features.iter().flatten().map(Vec::len).next()
    }
}

/// Builds and trains a network for `exp` on the non-rejected samples of
/// `source` listed in `train_idx`. Returns the model, its training history
/// and the number of samples it saw.
pub fn fit_source(
    source: &Prepared,
    train_idx: &[usize],
    exp: &Experiment,
    seed: u64,
) -> Result<(CropNet<f32>, Vec<EpochStats>, usize)> {
    let src = source.dataset;
    let train_idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| source.features[i].is_some())
        .collect();
    if train_idx.is_empty() {
        return Err(Error::Validation(
            "every training sample was rejected".into(),
        ));
    }
    let hyper_len = source.feature_len().unwrap_or(0);
    let cfg = network_config(
        exp.feature,
        &exp.composite,
        hyper_len,
        exp.widths,
        exp.dropout,
        src.schema.len(),
    );
    let mut model = CropNet::<f32>::build(cfg, seed)?;
    let base = |i: usize| source.features[i].clone().expect("filtered");
    let history = match (&exp.augmentation, exp.feature.is_median()) {
        (Some(aug), true) => {
            let set = AugmentedSet {
                items: train_idx
                    .iter()
                    .map(|&i| SeriesItem {
                        id: &src.samples[i].id,
                        series: &src.samples[i].series,
                        base: base(i),
                        label: src.samples[i].label,
                    })
                    .collect(),
                composite: exp.composite,
                augmentation: aug.clone(),
                seed,
            };
            train(&mut model, &set as &dyn TrainingSet, &exp.train, seed)?
        }
        _ => {
            let set = FeatureSet::new(
                train_idx.iter().map(|&i| base(i)).collect(),
                train_idx.iter().map(|&i| src.samples[i].label).collect(),
            )?;
            train(&mut model, &set, &exp.train, seed)?
        }
    };
    Ok((model, history, train_idx.len()))
}

struct SeedRun<'a, 'b> {
    exp: &'b Experiment,
    source: &'b Prepared<'a>,
    train_idx: &'b [usize],
    target: &'b Prepared<'a>,
    test_idx: &'b [usize],
}

impl SeedRun<'_, '_> {
    fn run(&self, seed: u64) -> Result<SeedResult> {
        let exp = self.exp;
        let src = self.source.dataset;
        let (model, history, train_samples) = fit_source(self.source, self.train_idx, exp, seed)?;
        let tgt = self.target.dataset;
        let kept: Vec<usize> = self
            .test_idx
            .iter()
            .copied()
            .filter(|&i| self.target.features[i].is_some())
            .collect();
        if kept.is_empty() {
            return Err(Error::Validation(
                "every evaluation sample was rejected".into(),
            ));
        }
        let feats: Vec<Vec<f32>> = kept
            .iter()
            .map(|&i| self.target.features[i].clone().expect("kept"))
            .collect();
        let preds = predict_batched(&model, &feats, 256)?.argmax_rows();
        let truth: Vec<usize> = kept.iter().map(|&i| tgt.samples[i].label).collect();
        let aligned = align_evaluation(&truth, &preds, &src.schema, &tgt.schema, &exp.rule)?;
        let cm = ConfusionMatrix::from_labels(&aligned.truth, &aligned.pred, tgt.schema.len())?;
        let m = metrics(&cm)?;
        let rejected = self.test_idx.len() - kept.len();
        let oa = if exp.strict {
            100.0 * cm.trace() as f64 / (cm.total() as f64 + rejected as f64)
        } else {
            m.oa
        };
        log::info!(
            "{} [{}] seed {seed}: OA {oa:.2} mF1 {:.2}",
            exp.name,
            exp.feature.name(),
            m.mf1
        );
        Ok(SeedResult {
            seed,
            oa,
            mf1: m.mf1,
            train_samples,
            evaluated: aligned.truth.len(),
            excluded: aligned.excluded,
            confusion: cm,
            history,
        })
    }
}

fn assemble(
    exp: &Experiment,
    source: &Prepared,
    train_idx: &[usize],
    target: &Prepared,
    test_idx: &[usize],
    seeds: Vec<SeedResult>,
) -> Result<EvaluationReport> {
    let k = target.dataset.schema.len();
    let mut confusion = ConfusionMatrix::zeros(k);
    for s in &seeds {
        confusion.add(&s.confusion)?;
    }
    let (oa_mean, oa_std) = mean_std(&seeds.iter().map(|s| s.oa).collect::<Vec<_>>());
    let (mf1_mean, mf1_std) = mean_std(&seeds.iter().map(|s| s.mf1).collect::<Vec<_>>());
    let target_rejected = target.rejected(test_idx);
    Ok(EvaluationReport {
        experiment: exp.name.clone(),
        source_region: source.dataset.region.clone(),
        target_region: target.dataset.region.clone(),
        feature: exp.feature,
        augmented: exp.augmentation.is_some(),
        strict: exp.strict,
        classes: target.dataset.schema.classes().to_vec(),
        seed_count: seeds.len(),
        recall: confusion.recall(),
        confusion,
        seeds,
        oa_mean,
        oa_std,
        mf1_mean,
        mf1_std,
        source_rejected: source.rejected(train_idx),
        target_rejected,
        target_rejection_rate: target_rejected as f64 / test_idx.len().max(1) as f64,
    })
}

static SEED_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Number of seeds trained concurrently by the experiment drivers. Each seed
/// is a pure function of its inputs, so reports do not depend on this value.
pub fn set_seed_threads(n: usize) {
    SEED_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn seed_threads() -> usize {
    SEED_THREADS.load(Ordering::Relaxed)
}

/// `f` over `items` on up to `threads` threads, results in input order.
fn map_seeds<T: Sync, R: Send>(
    threads: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.min(items.len());
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                scope.spawn(move || {
                    (t..items.len())
                        .step_by(threads)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("seed worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Trains on all of `source` and scores on all of `target`, once per seed.
/// Target labels are read only after prediction, for scoring.
pub fn run_transfer(
    source: &Dataset,
    target: &Dataset,
    exp: &Experiment,
    seeds: &[u64],
) -> Result<EvaluationReport> {
    exp.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    exp.rule.validate(&source.schema)?;
    let src = Prepared::new(source, exp)?;
    let tgt = Prepared::new(target, exp)?;
    let train_idx: Vec<usize> = (0..source.len()).collect();
    let test_idx: Vec<usize> = (0..target.len()).collect();
    if tgt.rejected(&test_idx) == test_idx.len() {
        return Err(Error::Validation("every target sample was rejected".into()));
    }
    let run = SeedRun {
        exp,
        source: &src,
        train_idx: &train_idx,
        target: &tgt,
        test_idx: &test_idx,
    };
    let results = map_seeds(seed_threads(), seeds, |&s| run.run(s))?;
    assemble(exp, &src, &train_idx, &tgt, &test_idx, results)
}

/// In-region protocol: a fresh seeded split of `dataset` per seed.
pub fn run_in_region(
    dataset: &Dataset,
    exp: &Experiment,
    train_fraction: f64,
    seeds: &[u64],
) -> Result<EvaluationReport> {
    exp.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let prepared = Prepared::new(dataset, exp)?;
    let splits = seeds
        .iter()
        .map(|&seed| split_indices(dataset.len(), train_fraction, seed).map(|split| (seed, split)))
        .collect::<Result<Vec<_>>>()?;
    let results = map_seeds(seed_threads(), &splits, |(seed, (train_idx, test_idx))| {
        SeedRun {
            exp,
            source: &prepared,
            train_idx,
            target: &prepared,
            test_idx,
        }
        .run(*seed)
    })?;
    let all_test: Vec<usize> = splits.into_iter().flat_map(|(_, (_, test))| test).collect();
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut report = assemble(exp, &prepared, &all, &prepared, &all_test, results)?;
    report.source_rejected = prepared.rejected(&all);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub window: u32,
    pub start_doy: i32,
    pub end_doy: i32,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub mf1_mean: f64,
}

/// One transfer run per `(window, span)` cell.
pub fn run_sensitivity(
    source: &Dataset,
    target: &Dataset,
    base: &Experiment,
    windows: &[u32],
    spans: &[(i32, i32)],
    seeds: &[u64],
) -> Result<Vec<SensitivityRow>> {
    if windows.is_empty() || spans.is_empty() {
        return Err(Error::Config("sensitivity grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(windows.len() * spans.len());
    for &(start, end) in spans {
        for &window in windows {
            let mut exp = base.clone();
            exp.composite =
                CompositeConfig::new(start, end, window, base.composite.max_missing_fraction)?;
            exp.name = format!("{}-d{window}-{start}-{end}", base.name);
            let r = run_transfer(source, target, &exp, seeds)?;
            rows.push(SensitivityRow {
                window,
                start_doy: start,
                end_doy: end,
                oa_mean: r.oa_mean,
                oa_std: r.oa_std,
                mf1_mean: r.mf1_mean,
            });
        }
    }
    Ok(rows)
}

pub fn write_sensitivity_csv<W: Write>(rows: &[SensitivityRow], mut w: W) -> Result<()> {
    writeln!(w, "window,start_doy,end_doy,oa_mean,oa_std,mf1_mean")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.window, r.start_doy, r.end_doy, r.oa_mean, r.oa_std, r.mf1_mean
        )?;
    }
    Ok(())
}

/// Cumulative augmentation ladder: none, +shift, +shift+scale, +all.
pub fn ablation_ladder(
    full: &AugmentationConfig,
) -> Vec<(&'static str, Option<AugmentationConfig>)> {
    let step = |shift, scale, warp| AugmentationConfig {
        shift,
        scale,
        warp,
        ..full.clone()
    };
    vec![
        ("none", None),
        ("shift", Some(step(true, false, false))),
        ("shift+scale", Some(step(true, true, false))),
        ("shift+scale+warp", Some(step(true, true, true))),
    ]
}

pub fn run_ablation(
    source: &Dataset,
    target: &Dataset,
    base: &Experiment,
    full: &AugmentationConfig,
    seeds: &[u64],
) -> Result<Vec<EvaluationReport>> {
    ablation_ladder(full)
        .into_iter()
        .map(|(name, aug)| {
            let mut exp = base.clone();
            exp.augmentation = aug;
            exp.name = format!("{}-{name}", base.name);
            run_transfer(source, target, &exp, seeds)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSchema;
    use crate::synth::{default_templates, generate_region, RegionConfig};

    #[test]
    fn hand_counted_matrix() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 1], vec![0, 1]]);
        let m = metrics(&cm).unwrap();
        assert!((m.oa - 200.0 / 3.0).abs() < 1e-9);
        assert!((m.f1[0].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.mf1 - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm =
            ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.oa, 100.0);
        assert_eq!(m.mf1, 100.0);
    }

    #[test]
    fn absent_class_is_excluded() {
        let cm =
            ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 0, 0], vec![1, 0, 1]]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.f1[1], None);
        // F1_0 = 2*(2/3)*1/(2/3+1) = 0.8, F1_2 = 2*1*0.5/1.5 = 2/3.
        assert!((m.mf1 - 100.0 * (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn predicted_only_class_scores_zero() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.f1[1], Some(0.0));
        assert!((m.mf1 - 100.0 * (2.0 / 3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(ConfusionMatrix::from_labels(&[0, 2], &[0, 1], 2).is_err());
        assert!(ConfusionMatrix::from_labels(&[0], &[0, 1], 2).is_err());
        assert!(metrics(&ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[4.0; 10]).1, 0.0);
    }

    #[test]
    fn feature_kind_parses() {
        for k in [
            FeatureKind::Median1d,
            FeatureKind::Median2d,
            FeatureKind::Harmonic,
            FeatureKind::Hyper,
        ] {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.name())
            );
        }
        assert!("median3d".parse::<FeatureKind>().is_err());
    }

    fn tiny_region(name: &str, shift: f64) -> Dataset {
        let r = RegionConfig {
            name: name.into(),
            shift_days: shift,
            samples_per_class: vec![3; 7],
            ..RegionConfig::default()
        };
        generate_region(&default_templates(), &LabelSchema::crop_globe(), &r, 5).unwrap()
    }

    fn tiny_experiment(feature: FeatureKind) -> Experiment {
        Experiment {
            feature,
            widths: [2, 2, 4, 4],
            train: TrainHyper {
                lr: 1e-3,
                batch_size: 8,
                epochs: 1,
            },
            ..Experiment::default()
        }
    }

    #[test]
    fn transfer_report_shape() {
        let src = tiny_region("A", 0.0);
        let tgt = tiny_region("B", 10.0);
        for kind in [
            FeatureKind::Median2d,
            FeatureKind::Median1d,
            FeatureKind::Harmonic,
        ] {
            let r = run_transfer(&src, &tgt, &tiny_experiment(kind), &[1, 2]).unwrap();
            assert_eq!(r.seeds.len(), 2);
            assert_eq!(r.seed_count, 2);
            assert!(r.seeds.iter().all(|s| (0.0..=100.0).contains(&s.oa)));
            assert_eq!(
                r.confusion.total(),
                r.seeds.iter().map(|s| s.evaluated as u64).sum::<u64>()
            );
        }
    }

    #[test]
    fn identical_seeds_have_zero_spread() {
        let src = tiny_region("A", 0.0);
        let r = run_transfer(&src, &src, &tiny_experiment(FeatureKind::Median2d), &[3; 4]).unwrap();
        assert_eq!(r.oa_std, 0.0);
        assert_eq!(r.mf1_std, 0.0);
    }

    #[test]
    fn single_cell_grid_matches_transfer() {
        let src = tiny_region("A", 0.0);
        let tgt = tiny_region("B", 5.0);
        let exp = tiny_experiment(FeatureKind::Median2d);
        let rows = run_sensitivity(&src, &tgt, &exp, &[5], &[(121, 334)], &[1]).unwrap();
        let r = run_transfer(&src, &tgt, &exp, &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].oa_mean, r.oa_mean);
    }

    #[test]
    fn hyper_without_vectors_is_rejected() {
        let src = tiny_region("A", 0.0);
        assert!(run_transfer(&src, &src, &tiny_experiment(FeatureKind::Hyper), &[1]).is_err());
    }

    #[test]
    fn ladder_is_cumulative() {
        let full = AugmentationConfig::default();
        let ladder = ablation_ladder(&full);
        let flags: Vec<Option<(bool, bool, bool)>> = ladder
            .iter()
            .map(|(_, a)| a.as_ref().map(|a| (a.shift, a.scale, a.warp)))
            .collect();
        assert_eq!(
            flags,
            [
                None,
                Some((true, false, false)),
                Some((true, true, false)),
                Some((true, true, true))
            ]
        );
    }

    #[test]
    fn threaded_map_keeps_order_and_errors() {
        let items: Vec<u64> = (0..11).collect();
        let seq = map_seeds(1, &items, |&x| Ok(x * x)).unwrap();
        for t in [2, 3, 20] {
            assert_eq!(map_seeds(t, &items, |&x| Ok(x * x)).unwrap(), seq);
        }
        let err = map_seeds(4, &items, |&x| {
            if x == 7 {
                Err(Error::Validation("seven".into()))
            } else {
                Ok(x)
            }
        });
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
