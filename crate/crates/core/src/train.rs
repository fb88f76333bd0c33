//! Minibatch training with validation-based model selection, RMSE
//! evaluation and learning-curve output.
//!
//! Per-record graphs inside a batch may be evaluated on several threads,
//! but losses and gradients are always combined in batch order, so the
//! thread count never changes a single bit of the result.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{minibatches, DataError, DatasetSplit, RadarRecord};
use crate::model::{Model, ModelError, ModelSpec, NamedTensors};
use crate::optim::{clip_grad_norm, OptimError, Optimizer, OptimizerKind};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("rmse needs equal non-empty inputs, got {predictions} predictions and {truths} truths")]
    RmseInput { predictions: usize, truths: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("record index {0} is out of range")]
    BadIndex(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a new best
    /// validation RMSE; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub model: ModelSpec,
    /// Worker threads; `None` uses rayon's default. Never affects results.
    pub threads: Option<usize>,
    /// Global gradient-norm ceiling; `None` leaves gradients untouched.
    pub clip: Option<f64>,
    /// Fill the `seconds` curve column with wall time. Off by default so
    /// repeated runs produce identical curve files.
    pub record_wall_time: bool,
    /// Print `epoch k: train=…, val=…` after every epoch.
    pub verbose: bool,
}

impl TrainConfig {
    pub const DEFAULT_LR: f64 = 0.001;
    pub const DEFAULT_BATCH: usize = 30;
    pub const DEFAULT_EPOCHS: usize = 50;
    pub const DEFAULT_PATIENCE: usize = 3;

    pub fn new(model: ModelSpec, seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: Self::DEFAULT_LR,
            batch_size: Self::DEFAULT_BATCH,
            max_epochs: Self::DEFAULT_EPOCHS,
            patience: Self::DEFAULT_PATIENCE,
            seed,
            model,
            threads: None,
            clip: None,
            record_wall_time: false,
            verbose: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be >= 1".into());
        }
        if self.threads == Some(0) {
            return bad("thread count must be >= 1".into());
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE.
    pub best: Model,
    pub best_epoch: usize,
    pub stats: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn best_val_rmse(&self) -> f64 {
        self.stats[self.best_epoch - 1].val_rmse
    }
}

/// `sqrt(mean((p − t)²))`. Squared errors are summed in ascending order,
/// which makes the result independent of the input order.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64, TrainError> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(TrainError::RmseInput { predictions: predictions.len(), truths: truths.len() });
    }
    let sq: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).collect();
    Ok(rmse_from_squared(sq))
}

fn rmse_from_squared(mut sq: Vec<f64>) -> f64 {
    let n = sq.len() as f64;
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / n).sqrt()
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, TrainError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| TrainError::Pool(e.to_string()))
}

/// Predictions for every record, in input order.
pub fn predict_all(model: &Model, records: &[RadarRecord]) -> Result<Vec<f64>, TrainError> {
    records.par_iter().map(|r| model.predict(r).map_err(TrainError::from)).collect()
}

/// RMSE of `model` over `records`.
pub fn evaluate(model: &Model, records: &[RadarRecord]) -> Result<f64, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let preds = predict_all(model, records)?;
    let truths: Vec<f64> = records.iter().map(RadarRecord::label).collect();
    rmse(&preds, &truths)
}

/// Like [`evaluate`] on a thread pool of the given size.
pub fn evaluate_with_threads(
    model: &Model,
    records: &[RadarRecord],
    threads: Option<usize>,
) -> Result<f64, TrainError> {
    pool(threads)?.install(|| evaluate(model, records))
}

fn gather<'a>(records: &'a [RadarRecord], idx: &[usize]) -> Result<Vec<&'a RadarRecord>, TrainError> {
    idx.iter().map(|&i| records.get(i).ok_or(TrainError::BadIndex(i))).collect()
}

fn add_into(acc: &mut NamedTensors, g: NamedTensors) {
    for (name, t) in g {
        match acc.get_mut(&name) {
            Some(a) => a.values_mut().iter_mut().zip(t.values()).for_each(|(a, b)| *a += b),
            None => {
                acc.insert(name, t);
            }
        }
    }
}

/// Mean loss, mean gradient and the per-record squared errors of one batch.
fn batch_step(
    model: &Model,
    inputs: &[Vec<Tensor>],
    labels: &[f64],
    batch: &[usize],
) -> Result<(f64, NamedTensors, Vec<f64>), TrainError> {
    let per_record: Vec<(f64, NamedTensors)> = batch
        .par_iter()
        .map(|&i| {
            let mut g = model.loss_graph(&inputs[i], labels[i])?;
            let loss = g.forward().map_err(ModelError::from)?;
            let grads = g.backward().map_err(ModelError::from)?;
            Ok::<_, TrainError>((loss, grads))
        })
        .collect::<Result<_, _>>()?;
    let n = batch.len() as f64;
    let mut sq = Vec::with_capacity(batch.len());
    let mut total = NamedTensors::new();
    for (loss, grads) in per_record {
        sq.push(loss);
        add_into(&mut total, grads);
    }
    for t in total.values_mut() {
        t.values_mut().iter_mut().for_each(|v| *v /= n);
    }
    let loss = sq.iter().sum::<f64>() / n;
    Ok((loss, total, sq))
}

/// Trains `cfg.model` from a seeded initialization on `split.train`,
/// scoring `split.validation` after every epoch. Returns the parameters
/// of the best validation epoch and the full learning curve.
pub fn train(cfg: &TrainConfig, records: &[RadarRecord], split: &DatasetSplit) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    pool(cfg.threads)?.install(|| train_inner(cfg, records, split))
}

fn train_inner(cfg: &TrainConfig, records: &[RadarRecord], split: &DatasetSplit) -> Result<TrainOutcome, TrainError> {
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    let train_records = gather(records, &split.train)?;
    let val_records: Vec<RadarRecord> = gather(records, &split.validation)?.into_iter().cloned().collect();
    let inputs: Vec<Vec<Tensor>> = train_records.par_iter().map(|r| model.prepare(r)).collect::<Result<_, _>>()?;
    let labels: Vec<f64> = train_records.iter().map(|r| r.label()).collect();
    let positions: Vec<usize> = (0..train_records.len()).collect();

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut stats = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut sq_errors = Vec::with_capacity(positions.len());
        for (b, batch) in minibatches(&positions, cfg.batch_size, epoch, cfg.seed).iter().enumerate() {
            let (loss, mut grads, sq) = batch_step(&model, &inputs, &labels, batch)?;
            let norm = crate::optim::grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                let loss = if loss.is_finite() { norm } else { loss };
                return Err(TrainError::NonFinite { epoch, batch: b + 1, loss });
            }
            if let Some(max) = cfg.clip {
                clip_grad_norm(&mut grads, max);
            }
            optimizer.step(model.params_mut(), &grads)?;
            sq_errors.extend(sq);
        }
        let train_rmse = rmse_from_squared(sq_errors);
        let val_rmse = evaluate(&model, &val_records)?;
        if !val_rmse.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: 0, loss: val_rmse });
        }
        let seconds = if cfg.record_wall_time { started.elapsed().as_secs_f64() } else { 0.0 };
        stats.push(EpochStats { epoch, train_rmse, val_rmse, seconds });
        if cfg.verbose {
            println!("epoch {epoch}: train={train_rmse:.6}, val={val_rmse:.6}");
        }
        if best.as_ref().is_none_or(|(_, v, _)| val_rmse < *v) {
            best = Some((epoch, val_rmse, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, stats })
}

fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Learning curve as CSV text: `epoch,train_rmse,val_rmse,seconds`, one
/// row per epoch in ascending order, reals to 9 significant digits.
pub fn curve_csv(stats: &[EpochStats]) -> String {
    let mut rows: Vec<&EpochStats> = stats.iter().collect();
    rows.sort_by_key(|s| s.epoch);
    let mut out = String::from("epoch,train_rmse,val_rmse,seconds\n");
    for s in rows {
        let _ = writeln!(out, "{},{},{},{}", s.epoch, sig9(s.train_rmse), sig9(s.val_rmse), sig9(s.seconds));
    }
    out
}

pub fn emit_curve(stats: &[EpochStats], path: impl AsRef<Path>) -> Result<(), TrainError> {
    if stats.is_empty() {
        return Err(TrainError::EmptySet("epoch statistics"));
    }
    let path = path.as_ref();
    std::fs::write(path, curve_csv(stats)).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}
