//! Concept-mask pre-training, fine-tuning, AdamW and the learning-rate
//! schedule.

mod mask;
mod optim;

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use mask::{mask_concepts, mask_spans, MaskedConcepts, PRETRAIN_CONCEPTS};
pub use optim::{learning_rate, AdamW};

use crate::error::{Error, Result};
use crate::model::{Example, Model, Pass};
use crate::numerics::{Graph, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pretrain,
    Finetune,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Mode::Pretrain),
            "finetune" => Ok(Mode::Finetune),
            _ => Err(Error::Config(format!(
                "unknown training mode {s:?} (expected pretrain or finetune)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub accumulation: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-5,
            warmup: 0.1,
            weight_decay: 0.01,
            batch_size: 16,
            accumulation: 4,
            epochs: 5,
            label_smoothing: 0.1,
            seed: 42,
            mode: Mode::Finetune,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(Error::Config(format!(
                "warm-up fraction must lie in [0, 1], got {}",
                self.warmup
            )));
        }
        if self.accumulation == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "batch size and accumulation steps must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    fn examples_per_step(&self) -> usize {
        self.batch_size * self.accumulation
    }
}

/// One optimizer step of the loss trace. `val_loss` is filled on the last
/// step of each epoch when a validation set is present.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Token-weighted mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Epoch (0-based) whose parameters are kept.
    pub best_epoch: usize,
    /// Parameters of the best validation epoch, or of the last epoch
    /// without validation data.
    pub best: ParamStore,
}

fn dropout_seed(seed: u64, counter: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ counter.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

type ExampleGrads = (f64, usize, Vec<(ParamId, Vec<f64>)>);

fn example_grads(
    model: &Model,
    store: &ParamStore,
    ex: &Example,
    config: &TrainConfig,
    dropout: Option<(f64, u64)>,
) -> Result<ExampleGrads> {
    let mut pass = match dropout {
        Some((rate, seed)) => Pass::train(rate, seed),
        None => Pass::eval(),
    }
    .pretraining(config.mode == Mode::Pretrain);
    let mut g = Graph::new();
    let (loss, tokens) = model.example_loss(&mut g, store, &mut pass, ex, config.label_smoothing)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss became {value}")));
    }
    Ok((value, tokens, g.param_grads(loss)?))
}

/// Token-weighted mean loss over `examples` without dropout.
pub fn evaluate_loss(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    config: &TrainConfig,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let pretrain = config.mode == Mode::Pretrain;
    let parts: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new();
            let mut pass = Pass::eval().pretraining(pretrain);
            let (loss, tokens) =
                model.example_loss(&mut g, store, &mut pass, ex, config.label_smoothing)?;
            Ok((g.value(loss).data()[0], tokens))
        })
        .collect::<Result<_>>()?;
    let (sum, tokens) = parts
        .iter()
        .fold((0.0, 0), |(s, n), (l, t)| (s + l, n + t));
    Ok(sum / tokens as f64)
}

/// Trains `store` in place on `train`, one optimizer step per
/// `batch_size · accumulation` examples. Gradients of all micro-batches in
/// a step are summed and divided by the step's target-token count, so the
/// update equals one step on the concatenated batch. Per-example work runs
/// on the rayon pool; reductions follow example order, so results do not
/// depend on the thread count.
pub fn run_training(
    model: &Model,
    store: &mut ParamStore,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let per_step = config.examples_per_step();
    let steps_per_epoch = train.len().div_ceil(per_step);
    let total_steps = steps_per_epoch * config.epochs;
    let dropout = model.config().dropout;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(store, config.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(total_steps);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut counter = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_sum, mut epoch_tokens) = (0.0, 0usize);
        for group in order.chunks(per_step) {
            store.zero_grads();
            let (mut step_sum, mut step_tokens) = (0.0, 0usize);
            for micro in group.chunks(config.batch_size) {
                let seeds: Vec<u64> = micro
                    .iter()
                    .map(|_| {
                        counter += 1;
                        dropout_seed(config.seed, counter)
                    })
                    .collect();
                let results: Vec<ExampleGrads> = micro
                    .par_iter()
                    .zip(seeds.par_iter())
                    .map(|(&i, &seed)| {
                        let d = (dropout > 0.0).then_some((dropout, seed));
                        example_grads(model, store, &train[i], config, d)
                    })
                    .collect::<Result<_>>()?;
                for (loss, tokens, grads) in results {
                    step_sum += loss;
                    step_tokens += tokens;
                    for (id, g) in grads {
                        store.get_mut(id).accumulate_grad(&g)?;
                    }
                }
            }
            store.scale_grads(1.0 / step_tokens as f64);
            let step = opt.steps_taken() + 1;
            let lr = learning_rate(config.lr, step, total_steps, config.warmup);
            opt.step(store, lr)?;
            epoch_sum += step_sum;
            epoch_tokens += step_tokens;
            trace.push(TraceRow {
                step,
                lr,
                loss: step_sum / step_tokens as f64,
                val_loss: None,
            });
        }
        let epoch_loss = epoch_sum / epoch_tokens as f64;
        epoch_losses.push(epoch_loss);
        if val.is_empty() {
            log::info!("epoch {}: train loss {epoch_loss:.4}", epoch + 1);
            continue;
        }
        let val_loss = evaluate_loss(model, store, val, config)?;
        log::info!(
            "epoch {}: train loss {epoch_loss:.4}, validation loss {val_loss:.4}",
            epoch + 1
        );
        val_losses.push(val_loss);
        if let Some(row) = trace.last_mut() {
            row.val_loss = Some(val_loss);
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, store.clone()));
        }
    }
    store.zero_grads();
    let (best_epoch, best) = match best {
        Some((_, epoch, params)) => (epoch, params),
        None => (config.epochs.saturating_sub(1), store.clone()),
    };
    Ok(TrainReport {
        trace,
        epoch_losses,
        val_losses,
        best_epoch,
        best,
    })
}

/// Writes the trace as CSV with columns `step,lr,loss,val_loss`.
pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "lr", "loss", "val_loss"]).map_err(csv_err)?;
    for row in trace {
        let val = row.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([row.step.to_string(), row.lr.to_string(), row.loss.to_string(), val])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
