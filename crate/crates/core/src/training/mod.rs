//! Loss, optimizer, the training loop with early stopping, and gradient
//! verification.

mod adam;
mod gradcheck;

pub use adam::{Adam, AdamConfig, FrozenRows};
pub use gradcheck::{
    analytic_gradient, compare_gradients, grad_check, relative_error, toy_sequences,
    GradCheckReport, TensorCheck, FD_STEP,
};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::metrics::{auprc, auroc};
use crate::model::{Model, ModelParams, PROB_FLOOR};
use crate::params::Parameters;
use crate::real::{Precision, Real};
use crate::rng::Streams;

/// Mean two-class cross-entropy. Also returns how many rows had their
/// true-class probability floored before the log.
pub fn loss<T: Real>(probs: &[[T; 2]], labels: &[u8]) -> Result<(T, usize)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let floor = T::lit(PROB_FLOOR);
    let mut total = T::zero();
    let mut clamped = 0;
    for (p, &y) in probs.iter().zip(labels) {
        if y > 1 {
            return Err(Error::Contract(format!("label {y} is not binary")));
        }
        let q = p[y as usize];
        if q < floor {
            clamped += 1;
        }
        total += -q.max(floor).ln();
    }
    Ok((total / T::lit(probs.len() as f64), clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub precision: Precision,
    pub adam: AdamConfig,
    /// Stop as soon as validation AUROC reaches this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_val_auroc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 30,
            seed: 0,
            precision: Precision::F64,
            adam: AdamConfig::default(),
            target_val_auroc: None,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly 0 is accepted as a no-op run.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and early_stop_patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub seconds: f64,
    /// Samples whose true-class probability was floored in the loss.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned parameters; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_auprc: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    TargetReached,
    Diverged { epoch: usize },
    NanGradient { epoch: usize, tensor: String },
}

impl TrainTrace {
    pub fn failure(&self) -> Option<Error> {
        match &self.stop {
            StopReason::Diverged { epoch } => Some(Error::Diverged { epoch: *epoch }),
            StopReason::NanGradient { epoch, tensor } => {
                Some(Error::NanGradient(format!("{tensor} at epoch {epoch}")))
            }
            _ => None,
        }
    }

    /// CSV with columns `epoch,loss,val_auprc,val_auroc,seconds,clamped`.
    /// With `wall_time == false` the seconds column is written as 0 so the
    /// file is reproducible byte for byte.
    pub fn write_csv(&self, path: &Path, wall_time: bool) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "epoch,loss,val_auprc,val_auroc,seconds,clamped").expect("vec write");
        for e in &self.epochs {
            let secs = if wall_time { e.seconds } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{},{:.3},{}",
                e.epoch, e.loss, e.val_auprc, e.val_auroc, secs, e.clamped
            )
            .expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Transferred rows that stay fixed for the first `epochs` epochs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreezeSchedule {
    pub rows: FrozenRows,
    pub epochs: usize,
}

/// Called after every epoch with the record and the current parameters.
pub type EpochHook<'a, T> = &'a mut dyn FnMut(&EpochRecord, &ModelParams<T>);

pub struct TrainOptions<'a, T> {
    pub freeze: FreezeSchedule,
    pub on_epoch: Option<EpochHook<'a, T>>,
}

impl<T> Default for TrainOptions<'_, T> {
    fn default() -> Self {
        TrainOptions {
            freeze: FreezeSchedule::default(),
            on_epoch: None,
        }
    }
}

pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch.
    pub model: Model<T>,
    pub trace: TrainTrace,
}

/// Samples per gradient work unit. Units are reduced in a fixed order, so
/// the summed gradient does not depend on the thread count.
const CHUNK: usize = 4;

fn batch_gradient<T: Real>(
    model: &Model<T>,
    batch: &[(usize, &TokenSequence)],
    streams: &Streams,
    epoch: usize,
) -> Result<(ModelParams<T>, T, usize)> {
    let w = T::one() / T::lit(batch.len() as f64);
    let parts: Vec<(ModelParams<T>, T, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let mut loss = T::zero();
            let mut clamped = 0;
            for (idx, seq) in chunk {
                let mut rng = streams.indexed("dropout", &[epoch as u64, *idx as u64]);
                let out = model.accumulate_gradient(seq, w, Some(&mut rng), &mut g)?;
                loss += out.loss;
                clamped += usize::from(out.clamped);
            }
            Ok((g, loss, clamped))
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut g, mut loss, mut clamped) = it.next().expect("non-empty batch");
    for (pg, pl, pc) in it {
        g.add_from(&pg);
        loss += pl;
        clamped += pc;
    }
    Ok((g, loss, clamped))
}

fn first_non_finite<T: Real>(g: &ModelParams<T>) -> Option<String> {
    g.tensors()
        .into_iter()
        .find(|(_, t)| !t.all_finite())
        .map(|(n, _)| n)
}

/// Validation AUPRC and AUROC of the current parameters.
pub fn validate<T: Real>(model: &Model<T>, val: &[&TokenSequence]) -> Result<(f64, f64)> {
    let scores: Vec<f64> = model
        .predict_scores(val)?
        .into_iter()
        .map(Real::as_f64)
        .collect();
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    Ok((auprc(&scores, &labels)?, auroc(&scores, &labels)?))
}

/// Adam training with early stopping on validation AUPRC. The returned
/// model holds the parameters of the best epoch; epoch 0 is the starting
/// point, so training never returns something worse on validation than it
/// was given.
pub fn train<T: Real>(
    model: Model<T>,
    train_set: &[&TokenSequence],
    val_set: &[&TokenSequence],
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_, T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let streams = Streams::new(cfg.seed);
    let lr = T::lit(cfg.learning_rate);
    let mut model = model;
    let mut adam = Adam::new(&model.params, cfg.adam);

    let (mut best_auprc, _) = validate(&model, val_set)?;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let frozen = if epoch <= opts.freeze.epochs {
            opts.freeze.rows.clone()
        } else {
            FrozenRows::default()
        };
        if epoch == opts.freeze.epochs + 1 && opts.freeze.epochs > 0 {
            adam.reset();
        }
        let mut rng = streams.indexed("shuffle", &[epoch as u64]);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);

        let mut epoch_loss = 0.0;
        let mut clamped = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, &TokenSequence)> =
                idx.iter().map(|&i| (i, train_set[i])).collect();
            let (grads, batch_loss, c) = batch_gradient(&model, &batch, &streams, epoch)?;
            if let Some(tensor) = first_non_finite(&grads) {
                log::error!("non-finite gradient in {tensor} at epoch {epoch}");
                stop = StopReason::NanGradient { epoch, tensor };
                break 'epochs;
            }
            epoch_loss += batch_loss.as_f64();
            clamped += c;
            adam.step(&mut model.params, &grads, lr, &frozen);
        }
        let loss = epoch_loss / train_set.len() as f64;
        if !loss.is_finite() || !model.params.all_finite() {
            log::error!("training diverged at epoch {epoch}");
            stop = StopReason::Diverged { epoch };
            break;
        }
        let (val_auprc, val_auroc) = validate(&model, val_set)?;
        let record = EpochRecord {
            epoch,
            loss,
            val_auprc,
            val_auroc,
            seconds: started.elapsed().as_secs_f64(),
            clamped,
        };
        log::debug!("epoch {epoch}: loss {loss:.5} val auprc {val_auprc:.4} auroc {val_auroc:.4}");
        epochs.push(record);
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record, &model.params);
        }

        if val_auprc > best_auprc {
            best_auprc = val_auprc;
            best_params.clone_from(&model.params);
            best_epoch = epoch;
            since_best = 0;
        } else if epoch > opts.freeze.epochs {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
        if cfg.target_val_auroc.is_some_and(|t| val_auroc >= t) {
            stop = StopReason::TargetReached;
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        trace: TrainTrace {
            epochs,
            best_epoch,
            best_val_auprc: best_auprc,
            stop,
        },
    })
}
