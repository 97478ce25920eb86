//! Two-phase training loop with step-decay learning rate and early stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Phase};
use crate::head;
use crate::optim::AdamConfig;
use crate::rng;
use crate::stream::BatchStream;
use crate::{Error, Result};

/// Metric watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Higher is better.
    ValAccuracy,
    /// Lower is better.
    ValLoss,
}

impl Monitor {
    pub fn value(self, record: &EpochRecord) -> f64 {
        match self {
            Monitor::ValAccuracy => record.val_accuracy,
            Monitor::ValLoss => record.val_loss,
        }
    }

    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Monitor::ValAccuracy => candidate > best,
            Monitor::ValLoss => candidate < best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_learning_rate: f64,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub early_stop_monitor: Monitor,
    pub phase1_epochs: usize,
    pub phase2_lr_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            base_learning_rate: 1e-4,
            weight_decay: 1e-7,
            early_stop_patience: 10,
            early_stop_monitor: Monitor::ValAccuracy,
            phase1_epochs: 10,
            phase2_lr_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        for (name, v) in [("epochs", self.epochs), ("batch_size", self.batch_size), ("early_stop_patience", self.early_stop_patience)] {
            if v == 0 {
                problems.push(format!("train.{name} must be at least 1"));
            }
        }
        for (name, v) in [("base_learning_rate", self.base_learning_rate), ("phase2_lr_scale", self.phase2_lr_scale)] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("train.{name} must be a positive number, got {v}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("train.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Phase and learning rate of `epoch`. The schedule restarts at the
    /// first full-finetune epoch with the scaled base rate.
    pub fn schedule(&self, epoch: usize) -> (Phase, f64) {
        if epoch < self.phase1_epochs {
            (Phase::HeadOnly, lr_at_epoch(self.base_learning_rate, epoch))
        } else {
            (
                Phase::FullFinetune,
                lr_at_epoch(self.base_learning_rate * self.phase2_lr_scale, epoch - self.phase1_epochs),
            )
        }
    }
}

/// `base_lr * 0.1^(epoch / 10)`. The decade shift is applied to the decimal
/// representation, so `lr_at_epoch(1e-4, 35)` is exactly `1e-7`.
pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    let k = epoch / 10;
    if k == 0 || base_lr == 0.0 || !base_lr.is_finite() {
        return base_lr;
    }
    let repr = format!("{base_lr:e}");
    let (mantissa, exp) = repr.split_once('e').expect("exponent form");
    let exp: i64 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}", exp - k as i64).parse().expect("valid float")
}

/// `-ln softmax(logits)[label]` in log-sum-exp form.
pub fn sparse_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Label(format!("label {label} outside 0..{}", logits.len())));
    }
    Ok(head::log_sum_exp(logits) - logits[label])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    /// Checks ordering, ranges and that `best_epoch` is the earliest optimum.
    pub fn validate(&self, monitor: Monitor) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let ok = r.epoch == i
                && (0.0..=1.0).contains(&r.train_accuracy)
                && (0.0..=1.0).contains(&r.val_accuracy)
                && r.train_loss >= 0.0
                && r.val_loss >= 0.0;
            if !ok {
                return Err(Error::Data(format!("history record {i} is out of order or out of range")));
            }
        }
        if !self.records.is_empty() {
            let values: Vec<f64> = self.records.iter().map(|r| monitor.value(r)).collect();
            let (_, best) = best_index(&values, monitor);
            if best != self.best_epoch {
                return Err(Error::Data(format!("best_epoch {} but the optimum is at {best}", self.best_epoch)));
            }
        }
        Ok(())
    }
}

fn best_index(values: &[f64], monitor: Monitor) -> (f64, usize) {
    let mut best = (values[0], 0);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if monitor.improves(v, best.0) {
            best = (v, i);
        }
    }
    best
}

/// `(should_stop, best_epoch)` for a monitored series: stop once `patience`
/// epochs have passed without a strict improvement over the earliest optimum.
pub fn early_stop_decision(values: &[f64], monitor: Monitor, patience: usize) -> (bool, usize) {
    if values.is_empty() {
        return (false, 0);
    }
    let (_, best) = best_index(values, monitor);
    (values.len() - 1 - best >= patience, best)
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _history: &TrainingHistory) -> Result<()> {
        Ok(())
    }

    /// Called after an epoch that strictly improved the monitored metric,
    /// with the classifier in its improved state.
    fn on_improvement(&mut self, _classifier: &Classifier, _history: &TrainingHistory) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Monotonic seconds source for [`EpochRecord::wall_time`].
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reads zero; keeps histories bit-reproducible.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Loss, accuracy, predictions and labels over a whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Inference-mode pass over epoch 0 of `stream`.
pub fn evaluate_stream(classifier: &Classifier, stream: &mut dyn BatchStream) -> Result<StreamEvaluation> {
    if stream.is_empty() {
        return Err(Error::Data("evaluation stream is empty".into()));
    }
    stream.start_epoch(0);
    let classes = classifier.classes();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(stream.len());
    let mut labels = Vec::with_capacity(stream.len());
    while let Some(batch) = stream.next_batch()? {
        let logits = classifier.predict_logits(&batch.images)?;
        for (row, &y) in logits.chunks(classes).zip(&batch.labels) {
            loss += sparse_cross_entropy(row, y)?;
            predictions.push(head::argmax(row));
        }
        labels.extend(batch.labels);
    }
    let n = labels.len() as f64;
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(StreamEvaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
        labels,
    })
}

const DROPOUT_TAG: u64 = 0x4452_4f50;

/// Runs the two-phase schedule, restores the best-epoch weights and returns
/// the history.
pub fn train(
    classifier: &mut Classifier,
    train_stream: &mut dyn BatchStream,
    val_stream: &mut dyn BatchStream,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
    clock: &dyn Clock,
) -> Result<TrainingHistory> {
    config.validate()?;
    if train_stream.is_empty() {
        return Err(Error::Data("training stream is empty".into()));
    }
    if val_stream.is_empty() {
        return Err(Error::Data("validation stream is empty".into()));
    }
    classifier.set_optimizer(config.adam());
    let monitor = config.early_stop_monitor;
    let start = clock.seconds();
    let mut history = TrainingHistory::default();
    let mut best_state = None;

    for epoch in 0..config.epochs {
        let (phase, lr) = config.schedule(epoch);
        classifier.set_trainable_phase(phase);
        let mut dropout_rng = rng::stream(config.seed, &[DROPOUT_TAG, epoch as u64]);
        train_stream.start_epoch(epoch);
        let (mut loss_sum, mut correct, mut seen, mut batch_idx) = (0.0, 0usize, 0usize, 0usize);
        while let Some(batch) = train_stream.next_batch()? {
            let out = classifier.train_step(&batch.images, &batch.labels, lr, &mut dropout_rng)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            loss_sum += out.loss * out.count as f64;
            correct += out.correct;
            seen += out.count;
            batch_idx += 1;
        }
        let val = evaluate_stream(classifier, val_stream)?;
        if !val.loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: batch_idx });
        }
        let record = EpochRecord {
            epoch,
            phase,
            learning_rate: lr,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            wall_time: clock.seconds() - start,
        };
        let improved = history
            .records
            .get(history.best_epoch)
            .map_or(true, |b| monitor.improves(monitor.value(&record), monitor.value(b)));
        history.records.push(record);
        if improved {
            history.best_epoch = epoch;
            best_state = Some(classifier.snapshot());
        }
        observer.on_epoch(history.records.last().expect("just pushed"), &history)?;
        if improved {
            observer.on_improvement(classifier, &history)?;
        }
        let values: Vec<f64> = history.records.iter().map(|r| monitor.value(r)).collect();
        if early_stop_decision(&values, monitor, config.early_stop_patience).0 {
            history.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    if let Some(state) = best_state {
        classifier.restore(&state)?;
    }
    Ok(history)
}
