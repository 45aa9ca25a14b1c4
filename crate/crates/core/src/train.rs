//! Deterministic mini-batch training with validation-loss checkpointing.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Dataset, ParallelExample};
use crate::error::{Error, Result};
use crate::model::{forward_loss, grad, ModelParams};
use crate::noise::Perturber;
use crate::optim::{adam_step, LrSchedule, OptimizerState};
use crate::seeds;

const EVAL_BATCH: usize = 256;

/// Everything that controls one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub max_updates: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many evaluations without improvement (0 disables).
    pub patience: usize,
    /// Validate every this many updates.
    pub eval_interval: usize,
    pub lr: LrSchedule,
    pub clip_norm: Option<f64>,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_updates == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config(
                "max_updates, batch_size and eval_interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryPoint {
    pub update: usize,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss.
    pub params: ModelParams,
    pub best_valid_loss: f64,
    pub best_update: usize,
    pub final_train_loss: f64,
    pub history: Vec<HistoryPoint>,
    pub updates_run: usize,
}

/// Mean per-token eval-mode loss over a dataset.
pub fn eval_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0.0;
    for chunk in data.examples.chunks(EVAL_BATCH) {
        let batch = Batch::from_examples(chunk, 0)?;
        let n = batch.target_tokens() as f64;
        let out = forward_loss(params, &batch, false)?;
        total += out.loss * n;
        tokens += n;
    }
    Ok(total / tokens)
}

/// Train from `init`, shuffling each epoch, optionally perturbing sources
/// with a fresh per-example noise draw per epoch, and return the checkpoint
/// with the lowest validation loss. Bit-deterministic given the schedule
/// seed and the inputs.
pub fn train(
    init: ModelParams,
    train_set: &Dataset,
    valid_set: &Dataset,
    schedule: &TrainSchedule,
    perturb: Option<&Perturber>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if valid_set.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }

    let mut params = init;
    let mut opt = OptimizerState::new(&params, schedule.lr);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::new();
    let mut interval_loss_sum = 0.0;
    let mut interval_batches = 0usize;
    let mut last_interval_mean = f64::NAN;
    let mut evals_since_improvement = 0usize;
    let mut update = 0usize;
    let mut epoch = 0usize;

    'outer: while update < schedule.max_updates {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(schedule.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);

        for idx_chunk in order.chunks(schedule.batch_size) {
            let mut examples: Vec<ParallelExample> = Vec::with_capacity(idx_chunk.len());
            for &i in idx_chunk {
                let ex = &train_set.examples[i];
                let source = match perturb {
                    Some(p) if !p.is_identity() => p.apply(&ex.source, seeds::example_seed(epoch, i))?,
                    _ => ex.source.clone(),
                };
                examples.push(ParallelExample {
                    source,
                    target: ex.target.clone(),
                });
            }
            let dropout_seed = seeds::derive(schedule.seed, "dropout", update as u64);
            let batch = Batch::from_examples(&examples, dropout_seed)?;
            let (loss, grads) = grad(&params, &batch, true)?;
            adam_step(&mut params, &mut opt, &grads, schedule.clip_norm)?;
            interval_loss_sum += loss;
            interval_batches += 1;
            update += 1;

            if update % schedule.eval_interval == 0 || update == schedule.max_updates {
                let valid = eval_loss(&params, valid_set)?;
                let train_mean = interval_loss_sum / interval_batches as f64;
                history.push(HistoryPoint {
                    update,
                    train_loss: train_mean,
                    valid_loss: valid,
                });
                last_interval_mean = train_mean;
                interval_loss_sum = 0.0;
                interval_batches = 0;

                let improved = best.as_ref().map_or(true, |(b, _, _)| valid < *b);
                if improved {
                    best = Some((valid, update, params.clone()));
                    evals_since_improvement = 0;
                } else {
                    evals_since_improvement += 1;
                    if schedule.patience > 0 && evals_since_improvement >= schedule.patience {
                        break 'outer;
                    }
                }
            }
            if update == schedule.max_updates {
                break 'outer;
            }
        }
        epoch += 1;
    }

    let (best_valid_loss, best_update, best_params) =
        best.expect("at least one evaluation happens");
    Ok(TrainOutcome {
        params: best_params,
        best_valid_loss,
        best_update,
        final_train_loss: last_interval_mean,
        history,
        updates_run: update,
    })
}
