//! AdamW training with warmup-cosine schedule, accumulation and early stopping.

mod eval;
mod optim;

use std::time::Instant;

use cuboidcast_tensor::{ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{splitmix64, SequenceDataset};
use crate::error::{config, Error, Result};
use crate::metrics::CsiConfig;
use crate::model::Model;

pub use eval::{evaluate, persistence, EvalReport, Forecaster, Metric, ALL_METRICS};
pub use optim::{adamw_step, clip_grad_norm, lr_schedule, AdamW, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: AdamW,
    /// Effective batch, reached by accumulating micro-batches.
    pub batch_size: usize,
    pub micro_batch: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            optimizer: AdamW::default(),
            batch_size: 64,
            micro_batch: 8,
            epochs: 100,
            warmup_frac: 0.2,
            patience: 20,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.micro_batch == 0 || self.epochs == 0 {
            return config("batch size, micro batch and epochs must be positive");
        }
        if !(self.lr >= 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return config(format!("bad lr {} or warmup fraction {}", self.lr, self.warmup_frac));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// The record without its wall-clock field, which is the only nondeterministic part.
    pub fn deterministic(&self) -> EpochRecord {
        EpochRecord { wall_time_s: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best: ParamStore<f32>,
    pub stopped_early: bool,
}

/// Tracks validation scores and decides when patience has run out.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Records a score; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

pub fn check_data(model: &Model, data: &SequenceDataset) -> Result<()> {
    let c = &model.cfg;
    let want = [c.input_len, c.target_len, c.height, c.width];
    let got = [data.input_len(), data.target_len(), data.height(), data.width()];
    if want != got || c.in_channels != 1 || c.out_channels != 1 {
        return Err(Error::Tensor(cuboidcast_tensor::TensorError::Dimension {
            op: "dataset",
            detail: format!("model expects T, K, H, W = {want:?} with one channel, dataset has {got:?}"),
        }));
    }
    Ok(())
}

/// Loss and gradients of one micro-batch, scaled by `weight`.
fn micro_step(model: &Model, x: Tensor<f32>, y: Tensor<f32>, weight: f64) -> Result<(f64, Vec<Tensor<f32>>)> {
    let tape = Tape::new();
    let p = model.params.bind(&tape, true);
    let pred = model.forward(&p, tape.constant(x))?;
    let loss = pred.mse(tape.constant(y))?;
    let value = loss.item() as f64;
    if !value.is_finite() {
        let op = tape.first_non_finite().unwrap_or("loss");
        return Err(Error::Runtime(format!("non-finite training loss, first produced by `{op}`")));
    }
    let grads = tape.backward(loss.scale(weight as f32))?;
    Ok((value, p.grads(&grads)))
}

fn add_into(acc: &mut [Tensor<f32>], g: &[Tensor<f32>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
    }
}

/// Trains in place. `model.params` ends with the last weights; the best are in the outcome.
pub fn train(model: &mut Model, train: &SequenceDataset, val: &SequenceDataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(model, train)?;
    check_data(model, val)?;
    if train.is_empty() || val.is_empty() {
        return config("training and validation sets must be non-empty");
    }
    let total_steps = cfg.epochs * cfg.steps_per_epoch(train.len());
    let mut state = OptimState::new(&model.params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut history = Vec::new();
    let mut step = 0;
    let start = Instant::now();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ splitmix64(epoch as u64))));
        let (mut loss_sum, mut norm_sum, mut lr) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let weight = |n: usize| n as f64 / batch.len() as f64;
            let parts: Vec<(f64, usize, Vec<Tensor<f32>>)> = batch
                .par_chunks(cfg.micro_batch)
                .map(|idx| {
                    let (x, y) = train.batch(idx);
                    micro_step(model, x, y, weight(idx.len())).map(|(l, g)| (l, idx.len(), g))
                })
                .collect::<Result<_>>()?;
            let mut parts = parts.into_iter();
            let (l0, n0, mut grads) = parts.next().expect("non-empty batch");
            loss_sum += l0 * n0 as f64;
            for (l, n, g) in parts {
                loss_sum += l * n as f64;
                add_into(&mut grads, &g);
            }
            let norm = match cfg.clip_norm {
                Some(max) => clip_grad_norm(&mut grads, max),
                None => clip_grad_norm(&mut grads, f64::INFINITY),
            };
            norm_sum += norm;
            step += 1;
            lr = lr_schedule(step, total_steps, cfg.warmup_frac, cfg.lr);
            adamw_step(&mut model.params, &grads, &mut state, &cfg.optimizer, lr);
        }
        let report = evaluate(Forecaster::Model(model), val, &[Metric::Mse], cfg.micro_batch, &CsiConfig::default())?;
        let val_mse = report.mse.expect("requested");
        let record = EpochRecord {
            epoch,
            step,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_loss: report.loss,
            val_mse,
            grad_norm: norm_sum / cfg.steps_per_epoch(train.len()) as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        if stopper.observe(epoch, val_mse) {
            best = model.params.clone();
        }
        if stopper.should_stop() {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome { history, best_epoch: stopper.best_epoch, best_val_mse: stopper.best, best, stopped_early })
}
