use serde::{Deserialize, Serialize};

use super::model::CropNet;
use crate::augment::{augment, AugmentationConfig};
use crate::data::SpectralTimeSeries;
use crate::error::{Error, Result};
use crate::features::CompositeConfig;
use crate::nn::{softmax_cross_entropy, Array4, Matrix, Mode};
use crate::rng::{self, Tag};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            batch_size: 256,
            epochs: 50,
        }
    }
}

impl TrainHyper {
    /// Short schedule for desk-scale synthetic runs: 10 epochs of batch 32.
    pub fn desk() -> Self {
        TrainHyper {
            lr: 3e-3,
            batch_size: 32,
            epochs: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Labelled features the training loop can draw from. Features may differ
/// per epoch (augmentation) but never in shape.
pub trait TrainingSet {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    /// Writes the feature of `index` for `epoch` into `out`.
    fn write_features(&self, index: usize, epoch: usize, out: &mut [f32]) -> Result<()>;
}

/// Fixed features, one flat vector per sample.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Vec<Vec<f32>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Shape("features differ in length".into()));
            }
        }
        Ok(FeatureSet { features, labels })
    }
}

impl TrainingSet for FeatureSet {
    fn len(&self) -> usize {
        self.features.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn write_features(&self, index: usize, _epoch: usize, out: &mut [f32]) -> Result<()> {
        out.copy_from_slice(&self.features[index]);
        Ok(())
    }
}

/// One augmentable sample: id and raw series plus its un-augmented feature.
#[derive(Clone, Debug)]
pub struct SeriesItem<'a> {
    pub id: &'a str,
    pub series: &'a SpectralTimeSeries,
    pub base: Vec<f32>,
    pub label: usize,
}

/// Median composites re-derived per `(sample, epoch)` through [`augment`].
/// A rejected augmented composite falls back to the un-augmented feature.
#[derive(Clone, Debug)]
pub struct AugmentedSet<'a> {
    pub items: Vec<SeriesItem<'a>>,
    pub composite: CompositeConfig,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

impl TrainingSet for AugmentedSet<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.items[index].label
    }

    fn write_features(&self, index: usize, epoch: usize, out: &mut [f32]) -> Result<()> {
        let item = &self.items[index];
        match augment(
            item.series,
            item.id,
            &self.composite,
            &self.augmentation,
            self.seed,
            epoch as u64,
        ) {
            Ok(f) => {
                if f.as_slice().len() != out.len() {
                    return Err(Error::Shape("augmented feature changed length".into()));
                }
                for (o, v) in out.iter_mut().zip(f.as_slice()) {
                    *o = *v as f32;
                }
            }
            Err(Error::Rejected { .. }) => out.copy_from_slice(&item.base),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

/// Mini-batch Adam on softmax cross-entropy. Batches are reshuffled every
/// epoch from the `Shuffle` stream; dropout masks come from per-batch
/// `Dropout` streams, so a run is a pure function of its inputs.
pub fn train(
    model: &mut CropNet<f32>,
    data: &dyn TrainingSet,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let n = data.len();
    let k = model.config().n_classes;
    for i in 0..n {
        if data.label(i) >= k {
            return Err(Error::Validation(format!(
                "label {} outside {k} classes",
                data.label(i)
            )));
        }
    }
    model.adam_mut().lr = hyper.lr;
    let [_, _, h, w] = model.batch_shape(1);
    let dim = h * w;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hyper.epochs {
        let mut shuffle = rng::stream(seed, Tag::Shuffle, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, idx) in order.chunks(hyper.batch_size).enumerate() {
            let mut x = vec![0f32; idx.len() * dim];
            for (slot, &i) in x.chunks_mut(dim).zip(idx) {
                data.write_features(i, epoch, slot)?;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
            let x = Array4::from_vec(model.batch_shape(idx.len()), x)?;
            let mut drop = rng::stream(seed, Tag::Dropout, &[epoch as u64, batch as u64]);
            let fwd = model.forward(&x, Mode::Train, Some(&mut drop))?;
            let (loss, grad) = softmax_cross_entropy(&fwd.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss as f64 * idx.len() as f64;
            correct += fwd
                .logits
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, t)| p == t)
                .count();
            let grads = model.backward(&fwd.cache, &grad, false)?;
            model.adam_step(&grads.params)?;
            model.apply_batch_stats(&fwd.stats)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        };
        log::info!(
            "epoch {:>3}  loss {:.4}  train acc {:.3}",
            epoch + 1,
            stats.loss,
            stats.accuracy
        );
        history.push(stats);
    }
    Ok(history)
}

/// Eval-mode probabilities for many flat features, `chunk` at a time.
pub fn predict_batched(
    model: &CropNet<f32>,
    features: &[Vec<f32>],
    chunk: usize,
) -> Result<Matrix<f32>> {
    let k = model.config().n_classes;
    let mut out = Vec::with_capacity(features.len() * k);
    for part in features.chunks(chunk.max(1)) {
        let x = Array4::from_vec(model.batch_shape(part.len()), part.concat())?;
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Matrix::from_vec(features.len(), k, out)
}
