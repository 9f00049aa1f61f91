//! Mini-batch training loop shared by both anomaly models.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributedGraph, GineModel};
use crate::autodiff::{Adam, Tensor};
use crate::error::{Error, Result};

/// Stop once the epoch loss has not improved by `min_delta` for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            min_delta: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-graph loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

pub(crate) struct TrainSpec {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop: Option<EarlyStop>,
}

/// `objective(model, batch)` returns the mean batch loss and its gradient
/// for every entry of [`GineModel::params`].
pub(crate) fn fit<F>(
    model: &mut GineModel,
    graphs: &[AttributedGraph],
    spec: &TrainSpec,
    rng: &mut ChaCha8Rng,
    objective: F,
) -> Result<TrainLog>
where
    F: Fn(&GineModel, &[usize]) -> Result<(f64, Vec<Tensor>)>,
{
    if spec.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(spec.lr > 0.0 && spec.lr.is_finite()) || spec.weight_decay < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid optimiser settings lr={} weight_decay={}",
            spec.lr, spec.weight_decay
        )));
    }
    let mut opt = Adam::new(spec.lr, spec.weight_decay);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..spec.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let (loss, grads) = objective(model, batch)?;
            if !loss.is_finite() {
                return Err(Error::InvalidArgument(format!("training loss diverged to {loss}")));
            }
            total += loss * batch.len() as f64;
            opt.step(&mut model.params_mut(), &grads)?;
        }
        let epoch_loss = total / graphs.len() as f64;
        log.epoch_losses.push(epoch_loss);
        if let Some(stop) = spec.early_stop {
            if epoch_loss < best - stop.min_delta {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(log)
}
