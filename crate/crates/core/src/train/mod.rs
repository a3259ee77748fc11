//! Mini-batch training with Adam and validation early stopping.
mod adam;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};

use crate::data::{batch_for, window_targets, PanelDataset, Subset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

fn default_batch() -> usize {
    64
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    20
}
fn default_min_delta() -> f64 {
    1e-6
}

impl TrainConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            seed: 0,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted as a frozen run
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, patience and max epochs must be at least 1".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode batch loss over the epoch (standardized units).
    pub train_mse: f64,
    /// Evaluation-mode MSE over the validation windows.
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Not part of any written artifact, so outputs stay reproducible.
    pub seconds_per_epoch: Vec<f64>,
}

impl TrainReport {
    /// Writes `epoch,train_mse,val_mse`.
    pub fn write_log<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_mse", "val_mse"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_mse.to_string(), e.val_mse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(1/B)·Σ(ŷ−y)²`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim("mse", format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Evaluation-mode predictions for every window of `subset`, in order.
/// Returns `(origins, predictions)` in standardized units.
pub fn predict_subset(model: &Model, panel: &PanelDataset, subset: Subset, batch_size: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let origins = window_targets(panel, model.config.window, subset)?;
    let mut preds = Vec::with_capacity(origins.len());
    for chunk in origins.chunks(batch_size.max(1)) {
        let batch = batch_for(panel, model.config.window, chunk)?;
        preds.extend(model.predict(&batch.inputs)?.predictions);
    }
    Ok((origins, preds))
}

pub fn subset_mse(model: &Model, panel: &PanelDataset, subset: Subset, batch_size: usize) -> Result<f64> {
    let (origins, preds) = predict_subset(model, panel, subset, batch_size)?;
    let targets: Vec<f64> = origins.iter().map(|&j| panel.target[j]).collect();
    mse_loss(&preds, &targets)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::Divergence {
            epoch,
            detail: format!("{op}: {detail}"),
        },
        other => other,
    }
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    inputs: Tensor,
    targets: &[f64],
    rng: &mut ChaCha8Rng,
    clip: Option<f64>,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let x = g.constant(inputs);
    let out = model.forward(&mut g, &bound, x, Some(rng))?;
    let y = g.constant(Tensor::from_vec(targets.to_vec()));
    let loss = g.mse(out.prediction, y)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric {
            op: "loss",
            detail: format!("batch loss is {value}"),
        });
    }
    g.backward(loss)?;
    let mut grads: Vec<Option<Vec<f64>>> = bound.iter().map(|(_, v)| g.grad(v).map(<[f64]>::to_vec)).collect();
    if let Some(max_norm) = clip {
        let norm = grads.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            grads.iter_mut().flatten().flatten().for_each(|v| *v *= s);
        }
    }
    opt.step(&mut model.params, &grads);
    Ok(value)
}

/// Trains from `init` and returns the best-validation parameters.
pub fn train(init: &Model, panel: &PanelDataset, tc: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with(init, panel, tc, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    init: &Model,
    panel: &PanelDataset,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainReport)> {
    tc.validate()?;
    if panel.standardizer.is_none() {
        return Err(Error::Contract("training expects a standardized panel".into()));
    }
    if panel.n_covariates() != init.config.n_features {
        return Err(Error::dim(
            "train",
            format!("panel has {} covariates, model expects {}", panel.n_covariates(), init.config.n_features),
        ));
    }
    let t = init.config.window;
    let mut order = window_targets(panel, t, Subset::Train)?;
    window_targets(panel, t, Subset::Validation)?;

    let mut model = init.clone();
    let mut opt = Adam::new(AdamConfig::new(tc.learning_rate), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        stopped_early: false,
        seconds_per_epoch: Vec::new(),
    };
    let mut stale = 0usize;
    for epoch in 1..=tc.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch = batch_for(panel, t, chunk)?;
            let loss = train_step(&mut model, &mut opt, batch.inputs, &batch.targets, &mut rng, tc.grad_clip)
                .map_err(|e| diverged(epoch, e))?;
            total += loss * chunk.len() as f64;
        }
        let train_mse = total / order.len() as f64;
        let val_mse = subset_mse(&model, panel, Subset::Validation, tc.batch_size).map_err(|e| diverged(epoch, e))?;
        if !val_mse.is_finite() || !model.params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation MSE {val_mse}"),
            });
        }
        let rec = EpochRecord { epoch, train_mse, val_mse };
        on_epoch(&rec);
        report.epochs.push(rec);
        report.seconds_per_epoch.push(started.elapsed().as_secs_f64());
        // the best epoch is the exact minimum; patience only resets on
        // improvements larger than min_delta
        let improved = val_mse < best.0 - tc.min_delta;
        if val_mse < best.0 {
            best = (val_mse, epoch, model.params.clone());
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_epoch = best.1;
    report.best_val_mse = best.0;
    model.params = best.2;
    Ok((model, report))
}
