use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_and_grads, AdamConfig, Dataset, LossKind, ModelParams, OptimizerState};
use crate::error::{Error, Result};
use crate::metrics;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    /// Epochs without a validation-loss improvement larger than `min_delta`
    /// before stopping. `None` runs every epoch and returns the final weights.
    pub patience: Option<usize>,
    pub min_delta: f64,
    /// Zero band used for the validation sign accuracy.
    pub zero_band: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossKind::Mae,
            patience: Some(20),
            min_delta: 1e-4,
            zero_band: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_sign_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were returned (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn evaluate_loss(params: &ModelParams, data: &Dataset, loss: LossKind) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    // Forward-only would do; the gradient pass is cheap at these sizes and
    // keeps one code path for the loss definition.
    Ok(loss_and_grads(params, data, &idx, loss)?.0)
}

fn val_sign_accuracy(params: &ModelParams, data: &Dataset, band: f64) -> Result<f64> {
    let mut pred = Vec::with_capacity(data.y.len());
    for i in 0..data.len() {
        pred.extend(params.forward(data.input(i))?);
    }
    metrics::sign_accuracy(&data.y, &pred, band)
}

/// Mini-batch training with per-epoch seeded shuffling and early stopping on
/// validation loss.
pub fn train(
    mut params: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, History)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
    }
    let mut opt = OptimizerState::new(&params, cfg.adam);
    let mut rng = seed::rng(cfg.seed, Stream::Shuffle, 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_grads(&params, train_set, batch, cfg.loss)?;
            opt.step(&mut params, &grads)?;
            weighted += loss * batch.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters after update"));
        }
        let val_loss = evaluate_loss(&params, val_set, cfg.loss)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: weighted / train_set.len() as f64,
            val_loss,
            val_sign_accuracy: val_sign_accuracy(&params, val_set, cfg.zero_band)?,
        });

        let Some(patience) = cfg.patience else {
            history.best_epoch = epoch;
            continue;
        };
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < b - cfg.min_delta);
        if improved {
            best = Some((val_loss, params.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let out = match (cfg.patience, best) {
        (Some(_), Some((_, p))) => p,
        _ => params,
    };
    Ok((out, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Activation, Architecture};
    use rand::Rng;

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng_from(seed);
        let mut d = Dataset::new(7, 2);
        for _ in 0..n {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = [(x[1] - 0.5).max(0.0), -(x[0] + 0.3).min(0.0) + 0.5 * x[2]];
            d.push(&x, &y);
        }
        d
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            input: 7,
            hidden: vec![4],
            output: 2,
            activation: Activation::Relu,
            split_index: 1,
        }
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let d = toy_data(64, 1);
        let cfg = TrainConfig {
            patience: Some(0),
            epochs: 50,
            ..TrainConfig::default()
        };
        let (_, h) = train(init_model(&tiny_arch(), 1).unwrap(), &d, &d, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 1);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let d = toy_data(500, 2);
        let val = toy_data(100, 3);
        let cfg = TrainConfig {
            epochs: 30,
            patience: None,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 4,
            ..TrainConfig::default()
        };
        let p0 = init_model(&tiny_arch(), 9).unwrap();
        let initial = evaluate_loss(&p0, &d, LossKind::Mae).unwrap();
        let (p, h) = train(p0.clone(), &d, &val, &cfg).unwrap();
        let last = h.epochs.last().unwrap().train_loss;
        assert!(last < initial, "initial {initial}, final {last}");
        assert!(evaluate_loss(&p, &d, LossKind::Mae).unwrap() < initial);
        let (p2, h2) = train(p0, &d, &val, &cfg).unwrap();
        assert_eq!(h, h2);
        assert_eq!(p, p2);
    }

    #[test]
    fn early_stopping_returns_best_epoch_weights() {
        let d = toy_data(200, 5);
        let val = toy_data(50, 6);
        let cfg = TrainConfig {
            epochs: 40,
            patience: Some(3),
            adam: AdamConfig {
                lr: 5e-2,
                ..AdamConfig::default()
            },
            seed: 1,
            ..TrainConfig::default()
        };
        let (p, h) = train(init_model(&tiny_arch(), 3).unwrap(), &d, &val, &cfg).unwrap();
        let best = &h.epochs[h.best_epoch - 1];
        let min = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best.val_loss <= min + cfg.min_delta);
        assert_eq!(evaluate_loss(&p, &val, LossKind::Mae).unwrap(), best.val_loss);
    }

    #[test]
    fn empty_sets_rejected() {
        let d = toy_data(10, 1);
        let empty = Dataset::new(7, 2);
        let p = init_model(&tiny_arch(), 1).unwrap();
        assert!(train(p.clone(), &empty, &d, &TrainConfig::default()).is_err());
        assert!(train(p, &d, &empty, &TrainConfig::default()).is_err());
    }
}
