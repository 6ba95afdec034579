use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Cnn, CnnConfig};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::loaders::{check_leakage, Dataset, LeakageCheck};
use crate::rng;

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Repeat runs per strategy in a benchmark.
    pub repeats: usize,
    /// Data-parallel mini-batch passes.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 64,
            epochs: 30,
            seed: 0,
            repeats: 10,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.repeats == 0 {
            return Err(Error::Config(format!(
                "batch size, epochs and repeats must be >= 1 (got {}, {}, {})",
                self.batch_size, self.epochs, self.repeats
            )));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation accuracy per epoch; empty without a validation set.
    pub val_accuracy: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    /// Monotonic wall time of the whole training loop, seconds.
    pub train_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Cnn,
    pub metrics: TrainMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per class; `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
}

fn labels(ds: &Dataset) -> Vec<usize> {
    ds.examples.iter().map(|e| e.class_id as usize - 1).collect()
}

fn check_compatible(config: &CnnConfig, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Ok(());
    }
    if ds.channels() != config.in_channels {
        return Err(Error::Shape(format!(
            "{what} set has {} channels, model expects {}",
            ds.channels(),
            config.in_channels
        )));
    }
    if let Some(e) = ds.examples.iter().find(|e| e.class_id == 0 || e.class_id as usize > config.n_classes) {
        return Err(Error::Config(format!(
            "{what} set has class {} outside 1..={}",
            e.class_id, config.n_classes
        )));
    }
    Ok(())
}

/// Mini-batch Adam training with seeded per-epoch shuffling. Keeps the
/// parameters of the epoch with the best validation accuracy (earliest on
/// ties), or the final epoch when `val` is empty.
pub fn train(config: CnnConfig, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    check_compatible(&config, train_set, "training")?;
    check_compatible(&config, val_set, "validation")?;
    let empty = train_set.subset(&[]);
    check_leakage(train_set, val_set, &empty, LeakageCheck::Segments).into_result()?;

    let start = Instant::now();
    let width = train_set.width();
    let y = labels(train_set);
    let mut model = Cnn::new(config, cfg.seed)?;
    let mut opt = Adam::new(cfg.optimizer, &model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(rng::mix(cfg.seed, 0x5348_5546));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut metrics = TrainMetrics {
        loss_curve: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::new(),
        best_epoch: cfg.epochs - 1,
        train_time_s: 0.0,
    };
    let mut best: Option<(f64, Cnn)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| train_set.examples[i].features.as_slice()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let pass = model.backward(&inputs, &batch_labels, width, cfg.parallel)?;
            if !pass.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: pass.loss,
                });
            }
            loss_sum += pass.loss * chunk.len() as f64;
            model.update_running(&pass.bn1, &pass.bn2);
            opt.step(model.params_mut(), &pass.grads);
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                loss: f64::NAN,
            });
        }
        metrics.loss_curve.push(loss_sum / train_set.len() as f64);
        if !val_set.is_empty() {
            let acc = evaluate(&model, val_set, cfg.parallel)?.accuracy;
            metrics.val_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.clone()));
                metrics.best_epoch = epoch;
            }
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    metrics.train_time_s = start.elapsed().as_secs_f64();
    Ok(TrainedModel { model, metrics })
}

/// Exact accuracy and per-class breakdown for 0-based predictions and labels.
pub fn metrics_from_predictions(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    let correct: usize = hits.iter().sum();
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        correct,
        total: labels.len(),
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    })
}

/// Eval-mode accuracy over a dataset.
pub fn evaluate(model: &Cnn, test_set: &Dataset, parallel: bool) -> Result<Metrics> {
    if test_set.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    check_compatible(&model.config, test_set, "test")?;
    let width = test_set.width();
    let mut predictions = Vec::with_capacity(test_set.len());
    for chunk in test_set.examples.chunks(EVAL_BATCH) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|e| e.features.as_slice()).collect();
        predictions.extend(model.predict(&inputs, width, parallel)?);
    }
    metrics_from_predictions(&predictions, &labels(test_set), model.config.n_classes)
}
