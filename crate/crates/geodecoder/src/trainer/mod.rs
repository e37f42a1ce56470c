//! Deterministic training loop: per-epoch seeded shuffles, per-sample tapes
//! evaluated in parallel, gradients averaged in a fixed order, AdamW updates
//! on a linear warmup/decay schedule. Equal seeds and data give bitwise-equal
//! checkpoints regardless of thread count, and an interrupted run resumed
//! from its optimizer state replays the same trajectory.

mod adamw;
mod checkpoint;

pub use adamw::{adamw_step, OptimizerState};
pub use checkpoint::{
    load_checkpoint, load_optimizer, optimizer_path, read_tensors, save_checkpoint,
    save_optimizer, CKPT_FORMAT,
};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, GeoDecoderParams, ModelError, SequenceInput};
use crate::numerics::{NumericsError, Scalar, Tape};
use crate::render::Raster;
use crate::stablehash::mix2;
use crate::textcodec::PAD;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("non-finite gradient {value} in tensor {tensor}")]
    NonFiniteGrad { tensor: String, value: f64 },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("training set is empty")]
    NoItems,
    #[error("item {index} has no target tokens")]
    EmptyTargets { index: usize },
    #[error("bad hyperparameter {field}: {detail}")]
    BadHyper { field: &'static str, detail: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad image {}: {detail}", path.display())]
    BadImage { path: PathBuf, detail: String },
    #[error("bad checkpoint {}: {detail}", path.display())]
    BadCheckpoint { path: PathBuf, detail: String },
    #[error("truncated checkpoint {}: tensor {tensor} at byte offset {offset}", path.display())]
    TruncatedCheckpoint { path: PathBuf, tensor: String, offset: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Optimization hyperparameters. Defaults are the full-scale recipe; small
/// runs usually shrink `batch_size` and set `steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    /// Total optimizer steps; overrides `epochs` when set. The learning-rate
    /// schedule always spans the total, so it must be fixed up front.
    pub steps: Option<usize>,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Optional max-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            batch_size: 64,
            epochs: 20,
            steps: None,
            peak_lr: 1e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.01,
            dropout: 0.1,
            grad_clip: None,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |field, detail: String| Err(TrainerError::BadHyper { field, detail });
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.epochs == 0 && self.steps.is_none() {
            return bad("epochs", "need epochs >= 1 or an explicit step count".into());
        }
        if self.steps == Some(0) {
            return bad("steps", "must be at least 1 when set".into());
        }
        if !(self.peak_lr >= 0.0) || !self.peak_lr.is_finite() {
            return bad("peak_lr", format!("{} is not a finite non-negative rate", self.peak_lr));
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(field, format!("{v} outside [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay", format!("{} is not finite non-negative", self.weight_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) || !c.is_finite() {
                return bad("grad_clip", format!("{c} is not a positive norm"));
            }
        }
        if self.log_every == 0 {
            return bad("log_every", "must be at least 1".into());
        }
        Ok(())
    }

    /// Total optimizer steps for a dataset of `n_items`.
    pub fn total_steps(&self, n_items: usize) -> usize {
        self.steps.unwrap_or_else(|| self.epochs * n_items.div_ceil(self.batch_size))
    }
}

/// Learning rate at optimizer step `step` (1-based): linear from 0 to `peak`
/// across `warmup` steps, then linear back to 0 at `total`.
pub fn lr_at(step: usize, warmup: usize, peak: f64, total: usize) -> f64 {
    assert!(step >= 1, "steps are 1-based");
    if step <= warmup {
        peak * step as f64 / warmup as f64
    } else if step >= total {
        0.0
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    }
}

/// Image side of a training item. Disk-backed items are read on use, so big
/// datasets never sit decoded in memory.
#[derive(Debug, Clone)]
pub enum ItemImage {
    None,
    Loaded(Raster),
    OnDisk(PathBuf),
}

impl ItemImage {
    fn load(&self) -> Result<Option<Raster>, TrainerError> {
        match self {
            ItemImage::None => Ok(None),
            ItemImage::Loaded(r) => Ok(Some(r.clone())),
            ItemImage::OnDisk(path) => {
                let bytes = fs::read(path)
                    .map_err(|e| TrainerError::Io { path: path.clone(), source: e })?;
                let raster = Raster::from_ppm(&bytes).map_err(|e| TrainerError::BadImage {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                Ok(Some(raster))
            }
        }
    }
}

/// One supervised example. `target_ids` is the full output including the
/// trailing end token; samples are never padded, so every target position
/// contributes to the loss.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: ItemImage,
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Steps executed by this call (resumed runs report only their share).
    pub steps_run: usize,
    /// Schedule length the run is (or was) heading for.
    pub total_steps: usize,
    pub final_loss: Option<f64>,
    pub log: Vec<LogEntry>,
}

/// Loss and per-tensor gradient (registry order) for one sample on its own
/// tape. Parameters the sample never touches get zero gradients.
fn sample_grads<S: Scalar>(
    params: &GeoDecoderParams<S>,
    item: &TrainItem,
    dropout: f64,
    dropout_key: u64,
) -> Result<(f64, Vec<Vec<S>>), TrainerError> {
    let raster = item.image.load()?;
    let mut tape = Tape::with_dropout_key(dropout_key);
    let bound = params.bind(&mut tape)?;
    let input = SequenceInput {
        raster: raster.as_ref(),
        input_ids: &item.input_ids,
        output_ids: &item.target_ids,
    };
    let acts = forward(&mut tape, params.config(), &bound, &input, dropout)?;
    let logits = acts.logits.expect("non-empty targets imply logits");
    let loss = tape.cross_entropy_mean(logits, &item.target_ids, PAD)?;
    tape.backward(loss)?;
    let loss_value = tape.scalar_value(loss).to_f64_c();
    let grads = bound
        .ids()
        .iter()
        .map(|&id| match tape.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); tape.data(id).len()],
        })
        .collect();
    Ok((loss_value, grads))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix2(mix2(seed, 0x9e70c4), epoch as u64));
    order.shuffle(&mut rng);
    order
}

struct Sink {
    log: BufWriter<File>,
    dir: PathBuf,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self, TrainerError> {
        fs::create_dir_all(dir).map_err(|e| TrainerError::Io { path: dir.into(), source: e })?;
        let path = dir.join("train_log.jsonl");
        let file = File::options()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TrainerError::Io { path: path.clone(), source: e })?;
        Ok(Sink { log: BufWriter::new(file), dir: dir.to_path_buf() })
    }

    fn log(&mut self, entry: &LogEntry) -> Result<(), TrainerError> {
        let io = |e| TrainerError::Io { path: self.dir.join("train_log.jsonl"), source: e };
        let line = serde_json::to_string(entry).expect("log entry serializes");
        self.log.write_all(line.as_bytes()).map_err(io)?;
        self.log.write_all(b"\n").map_err(io)?;
        self.log.flush().map_err(io)
    }

    fn checkpoint<S: Scalar>(
        &self,
        name: &str,
        params: &GeoDecoderParams<S>,
        state: &OptimizerState<S>,
    ) -> Result<(), TrainerError> {
        let p32 = params.cast::<f32>();
        let path = self.dir.join(name);
        save_checkpoint(&path, &p32, state.step)?;
        save_optimizer(&optimizer_path(&path), &state.cast::<f32>(), &p32)
    }
}

impl<S: Scalar> OptimizerState<S> {
    pub fn cast<T: Scalar>(&self) -> OptimizerState<T> {
        let conv = |src: &Vec<Vec<S>>| {
            src.iter()
                .map(|a| a.iter().map(|v| T::from_f64_c(v.to_f64_c())).collect())
                .collect()
        };
        OptimizerState { step: self.step, m: conv(&self.m), v: conv(&self.v) }
    }
}

/// Runs the loop from `opt.step` until the scheduled total (or `until_step`,
/// if earlier). Batch order, dropout masks and the schedule depend only on
/// (seed, step), so splitting a run across calls changes nothing.
///
/// With `out_dir` set, appends `{step, lr, loss}` lines to
/// `train_log.jsonl`, writes `epoch-NNNN.ckpt` after each epoch and
/// `model.ckpt` when the call stops.
pub fn train<S: Scalar>(
    params: &mut GeoDecoderParams<S>,
    opt: &mut OptimizerState<S>,
    items: &[TrainItem],
    hyper: &TrainHyper,
    out_dir: Option<&Path>,
    until_step: Option<usize>,
) -> Result<TrainReport, TrainerError> {
    hyper.validate()?;
    if items.is_empty() {
        return Err(TrainerError::NoItems);
    }
    if let Some(i) = (0..items.len()).find(|&i| items[i].target_ids.is_empty()) {
        return Err(TrainerError::EmptyTargets { index: i });
    }

    let n = items.len();
    let batches_per_epoch = n.div_ceil(hyper.batch_size);
    let total = hyper.total_steps(n);
    let stop = until_step.map_or(total, |u| u.min(total));
    let mut sink = out_dir.map(Sink::open).transpose()?;
    let start = opt.step;
    let mut report = TrainReport {
        steps_run: 0,
        total_steps: total,
        final_loss: None,
        log: Vec::new(),
    };

    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;
    while opt.step < stop {
        let bi = opt.step;
        let epoch = bi / batches_per_epoch;
        let slot = bi % batches_per_epoch;
        if epoch != order_epoch {
            order = epoch_order(n, hyper.seed, epoch);
            order_epoch = epoch;
        }
        let lo = slot * hyper.batch_size;
        let hi = (lo + hyper.batch_size).min(n);
        let batch = &order[lo..hi];
        let step = bi + 1;
        let step_key = mix2(hyper.seed, step as u64);

        let results: Vec<(f64, Vec<Vec<S>>)> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| sample_grads(params, &items[i], hyper.dropout, mix2(step_key, j as u64)))
            .collect::<Result<_, _>>()?;

        // Accumulate in batch order so thread scheduling cannot change sums.
        let mut loss = 0.0;
        let mut grads: Vec<Vec<S>> =
            params.tensors().iter().map(|t| vec![S::zero(); t.data.len()]).collect();
        for (sample_loss, sample_grads) in &results {
            loss += sample_loss;
            for (acc, g) in grads.iter_mut().zip(sample_grads) {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let inv = S::from_f64_c(1.0 / batch.len() as f64);
        loss /= batch.len() as f64;
        for g in &mut grads {
            for v in g {
                *v *= inv;
            }
        }
        if !loss.is_finite() {
            return Err(TrainerError::NonFiniteLoss { step, loss });
        }
        if let Some(max_norm) = hyper.grad_clip {
            let sq: f64 = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| {
                    let x = v.to_f64_c();
                    x * x
                })
                .sum();
            let norm = sq.sqrt();
            if norm > max_norm {
                let scale = S::from_f64_c(max_norm / norm);
                for g in &mut grads {
                    for v in g {
                        *v *= scale;
                    }
                }
            }
        }

        let lr = lr_at(step, hyper.warmup_steps, hyper.peak_lr, total);
        adamw_step(params, &grads, opt, hyper, lr)?;
        report.steps_run += 1;
        report.final_loss = Some(loss);

        if step % hyper.log_every == 0 || step == stop {
            let entry = LogEntry { step, lr, loss };
            if let Some(s) = sink.as_mut() {
                s.log(&entry)?;
            }
            report.log.push(entry);
        }
        if let Some(s) = sink.as_ref() {
            if slot + 1 == batches_per_epoch {
                s.checkpoint(&format!("epoch-{:04}.ckpt", epoch + 1), params, opt)?;
            }
        }
    }

    if let Some(s) = sink.as_ref() {
        if opt.step > start {
            s.checkpoint("model.ckpt", params, opt)?;
        }
    }
    Ok(report)
}
