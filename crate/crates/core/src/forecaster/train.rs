//! Mini-batch training with Adam and early stopping on validation MSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastError, Forecaster, Result};
use crate::market_data::WindowSample;
use crate::numerics::{adam_step, AdamConfig, BatchNormCache, Gradients, OptimState, ParamSet};

/// Result of one train-mode forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct TrainStep {
    pub loss: f64,
    pub grads: Gradients,
    /// Batch statistics for each batch-norm layer, by name.
    pub batch_norm: Vec<(String, BatchNormCache)>,
}

pub trait Trainable: Forecaster + Clone {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// MSE loss and its gradient on `batch`; `seed` fixes the dropout masks.
    fn train_step(&self, batch: &[&WindowSample], seed: u64) -> Result<TrainStep>;
    /// Folds batch statistics into running statistics.
    fn absorb(&mut self, _step: &TrainStep) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            patience: 10,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the train-mode batch losses.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Mean squared error in model space over `samples`.
pub fn mse<F: Forecaster>(model: &F, samples: &[WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let chunks: Vec<&[WindowSample]> = samples.chunks(32).collect();
    let sums = crate::par::map(&chunks, |chunk| -> Result<(f64, usize)> {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let z = model.predict_batch(&refs)?;
        let mut sum = 0.0;
        let mut n = 0;
        for (s, z) in chunk.iter().zip(&z) {
            for (a, b) in z.iter().zip(s.normalized_target()) {
                sum += (a - b) * (a - b);
                n += 1;
            }
        }
        Ok((sum, n))
    });
    let mut total = 0.0;
    let mut n = 0;
    for s in sums {
        let (a, b) = s?;
        total += a;
        n += b;
    }
    Ok(total / n as f64)
}

fn mix(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (batch as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Trains `model` in place. Batches are reshuffled each epoch from `cfg.seed`;
/// the parameters with the best validation MSE (training MSE when there is
/// no validation set) are restored at the end.
pub fn train<M: Trainable>(model: &mut M, train: &[WindowSample], val: &[WindowSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(ForecastError::NoTrainingWindows);
    }
    let mut outcome = TrainOutcome {
        history: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    let batch_size = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut opt = OptimState::default();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &train[i]).collect();
            let step = model.train_step(&batch, mix(cfg.seed, epoch, b))?;
            if !step.loss.is_finite() {
                return Err(ForecastError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: step.loss,
                });
            }
            model.params_mut().set_grads(&step.grads)?;
            adam_step(model.params_mut(), &mut opt, &cfg.adam)?;
            model.absorb(&step);
            losses.push(step.loss);
        }
        let train_mse = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_mse = if val.is_empty() { None } else { Some(mse(model, val)?) };
        outcome.history.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });

        let score = val_mse.unwrap_or(train_mse);
        if !score.is_finite() {
            return Err(ForecastError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: score,
            });
        }
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model.clone()));
            outcome.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(outcome)
}
