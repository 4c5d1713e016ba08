//! Training loop, early stopping, evaluation and source-task pretraining.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentSpec};
use crate::dataset::Dataset;
use crate::image::Image;
use crate::model::{
    apply_freeze, backward_partial, forward, forward_cached, head_loss, reinit_head, FreezeMask, HeadKind, ModelParams,
};
use crate::optim::{optimizer_step, OptimizerSpec, OptimizerState};
use crate::rng::RngStream;
use crate::schedule::{lr_at, lr_finder, LrFinderConfig, LrFinderResult, ScheduleSpec};
use crate::split::{holdout_split_labels, SamplingStrategy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Parameters are rounded to single precision after every update.
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSpec,
    pub head: HeadKind,
    pub freeze: FreezeMask,
    pub patience_epochs: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub precision: Precision,
}

fn default_max_epochs() -> usize {
    1000
}

impl TrainConfig {
    /// Batch 16, lr 2e-5, Adam, constant schedule, patience 100, softmax
    /// cross-entropy, everything trainable.
    pub fn table1() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 2e-5,
            optimizer: OptimizerSpec::adam(),
            schedule: ScheduleSpec::Constant,
            head: HeadKind::SoftmaxCrossEntropy,
            freeze: FreezeMask::all_trainable(),
            patience_epochs: 100,
            max_epochs: default_max_epochs(),
            augment: AugmentSpec::default(),
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.patience_epochs == 0 {
            return Err(Error::invalid("patience_epochs must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.augment.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot taken at `best_epoch`.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels for {} predictions", truth.len(), predicted.len())));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!("class index out of range for {classes} classes")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// `1 - M_ii / Σ_j M_ij`; `None` for classes with no samples.
    pub fn per_class_error(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| 1.0 - row[i] as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_error: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

const EVAL_CHUNK: usize = 128;

/// Accuracy, per-class error and confusion matrix on `indices`.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty view"));
    }
    let classes = params.arch().classes;
    if classes != dataset.class_count() {
        return Err(Error::Shape(format!("model has {classes} classes, dataset {}", dataset.class_count())));
    }
    let mut predicted = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let imgs: Vec<&Image> = chunk.iter().map(|&i| &dataset.sample(i).image).collect();
        predicted.extend(forward(params, &imgs)?.argmax());
    }
    let truth: Vec<usize> = indices.iter().map(|&i| dataset.sample(i).label).collect();
    let confusion = ConfusionMatrix::from_predictions(classes, &truth, &predicted)?;
    Ok(Evaluation { accuracy: confusion.accuracy(), per_class_error: confusion.per_class_error(), confusion })
}

fn round_trainable_to_f32(params: &mut ModelParams, mask: &FreezeMask) {
    for (i, slot) in params.arch().layout().into_iter().enumerate() {
        if mask.is_trainable(i) {
            for v in &mut params.values_mut()[slot.weight.start..slot.bias.end] {
                *v = f64::from(*v as f32);
            }
        }
    }
}

struct Stepper<'a> {
    config: &'a TrainConfig,
    state: OptimizerState,
    lowest: Option<usize>,
    step: usize,
}

impl<'a> Stepper<'a> {
    fn new(config: &'a TrainConfig, len: usize) -> Self {
        Self { config, state: OptimizerState::new(config.optimizer, len), lowest: config.freeze.lowest_trainable(), step: 0 }
    }

    /// One optimizer step on `images`; returns the loss before the update.
    fn run(&mut self, params: &mut ModelParams, images: &[&Image], labels: &[usize], lr: f64, epoch: usize) -> Result<f64> {
        let (logits, cache) = forward_cached(params, images)?;
        let (loss, dlogits) = head_loss(self.config.head, &logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: self.step });
        }
        if let Some(lowest) = self.lowest {
            let grads = apply_freeze(backward_partial(params, &cache, &dlogits, lowest)?, &self.config.freeze);
            optimizer_step(&mut self.state, params, &grads, lr, self.step)?;
            if self.config.precision == Precision::F32 {
                round_trainable_to_f32(params, &self.config.freeze);
            }
        }
        self.step += 1;
        Ok(loss)
    }
}

fn check_view(dataset: &Dataset, view: &[usize], what: &str) -> Result<()> {
    if view.is_empty() {
        return Err(Error::invalid(format!("{what} view is empty")));
    }
    if let Some(&i) = view.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("{what} view index {i} out of range")));
    }
    Ok(())
}

/// Mini-batch training with validation-accuracy early stopping.
///
/// Each epoch shuffles the training view with stream `epoch/<e>`, keeps the
/// final partial batch, and augments training images with stream
/// `augment/<e>`. Training stops once `patience_epochs` epochs pass without
/// a strictly higher validation accuracy, or at `max_epochs`.
pub fn train_loop(
    params: &ModelParams,
    dataset: &Dataset,
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_view(dataset, train, "training")?;
    check_view(dataset, val, "validation")?;
    let mut current = params.clone();
    let mut stepper = Stepper::new(config, current.values().len());
    let mut history = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, current.clone());
    let mut order = train.to_vec();
    for epoch in 1..=config.max_epochs {
        rng.child(&format!("epoch/{epoch}")).shuffle(&mut order);
        let mut aug_rng = rng.child(&format!("augment/{epoch}"));
        let first_lr = lr_at(&config.schedule, config.learning_rate, epoch - 1, stepper.step);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let lr = lr_at(&config.schedule, config.learning_rate, epoch - 1, stepper.step);
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.sample(i).label).collect();
            let loss = if config.augment.is_identity() {
                let imgs: Vec<&Image> = batch.iter().map(|&i| &dataset.sample(i).image).collect();
                stepper.run(&mut current, &imgs, &labels, lr, epoch)?
            } else {
                let owned = augment_batch(dataset, batch, &config.augment, &mut aug_rng);
                let imgs: Vec<&Image> = owned.iter().collect();
                stepper.run(&mut current, &imgs, &labels, lr, epoch)?
            };
            loss_sum += loss * batch.len() as f64;
        }
        let val_accuracy = evaluate(&current, dataset, val)?.accuracy;
        history.push(EpochRecord { epoch, train_loss: loss_sum / order.len() as f64, val_accuracy, lr: first_lr });
        if val_accuracy > best.1 {
            best = (epoch, val_accuracy, current.clone());
        }
        if epoch - best.0 >= config.patience_epochs {
            break;
        }
    }
    let (best_epoch, best_val_accuracy, params) = best;
    Ok(TrainOutcome { params, history, best_epoch, best_val_accuracy })
}

/// Largest number of epochs between successive strict improvements of
/// validation accuracy in a pilot history (at least 1).
pub fn patience_from_history(history: &[EpochRecord]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut last = None;
    let mut gap = 1;
    for r in history {
        if r.val_accuracy > best {
            if let Some(prev) = last {
                gap = gap.max(r.epoch - prev);
            }
            best = r.val_accuracy;
            last = Some(r.epoch);
        }
    }
    gap
}

/// Exponential learning-rate sweep over mini-batches of the training view,
/// using the configured optimizer, head and freeze mask.
pub fn find_learning_rate(
    params: &ModelParams,
    dataset: &Dataset,
    train: &[usize],
    config: &TrainConfig,
    finder: &LrFinderConfig,
    rng: &RngStream,
) -> Result<LrFinderResult> {
    check_view(dataset, train, "training")?;
    let mut current = params.clone();
    let mut stepper = Stepper::new(config, current.values().len());
    let mut order = train.to_vec();
    let mut pass = 0;
    let mut cursor = order.len();
    lr_finder(finder, |_, lr| {
        if cursor >= order.len() {
            rng.child(&format!("pass/{pass}")).shuffle(&mut order);
            pass += 1;
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let imgs: Vec<&Image> = batch.iter().map(|&i| &dataset.sample(i).image).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| dataset.sample(i).label).collect();
        match stepper.run(&mut current, &imgs, &labels, lr, 1) {
            Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFiniteGradient { .. }) => Ok(f64::INFINITY),
            other => other,
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    /// Source-trained weights with a fresh head sized for the target task.
    pub params: ModelParams,
    /// Accuracy on the held-out 20% of the source data.
    pub source_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains on a source task (stratified 80/20 split for early stopping),
/// then swaps in a freshly initialized head for `target_classes`.
pub fn pretrain_source(
    params: &ModelParams,
    source: &Dataset,
    config: &TrainConfig,
    target_classes: usize,
    rng: &RngStream,
) -> Result<Pretrained> {
    if params.arch().classes != source.class_count() {
        return Err(Error::Shape(format!(
            "source task has {} classes but the head has {}",
            source.class_count(),
            params.arch().classes
        )));
    }
    let plan = holdout_split_labels(
        &source.labels(),
        source.class_count(),
        0.2,
        SamplingStrategy::StratifiedRandom,
        &mut rng.child("split"),
    )?;
    let out = train_loop(params, source, &plan.rest_indices, &plan.test_indices, config, &rng.child("train"))?;
    let fresh = reinit_head(&out.params, target_classes, &mut rng.child("head"))?;
    Ok(Pretrained { params: fresh, source_accuracy: out.best_val_accuracy, history: out.history })
}

/// Human-readable name for a run, used in logs and artifact rows.
pub fn describe(config: &TrainConfig) -> String {
    format!(
        "{} lr={} batch={} {} {} freeze={} patience={}",
        config.optimizer.name(),
        config.learning_rate,
        config.batch_size,
        config.schedule.name(),
        config.head.name(),
        config.freeze.label(),
        config.patience_epochs
    )
}
