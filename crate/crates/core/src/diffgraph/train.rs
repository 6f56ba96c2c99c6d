use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState, StepSchedule};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Minibatch optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Halve the learning rate four times over the run.
    #[serde(default = "default_true")]
    pub step_decay: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            step_decay: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Shuffle `0..n` each epoch and hand batches of indices to `step`, which
/// returns the batch loss and gradients for `params`. Returns the mean batch
/// loss per epoch.
///
/// Any failure inside an epoch (non-finite loss or gradient, bad update) is
/// reported as [`Error::Training`] with its epoch and batch.
pub fn minibatch_train<F>(
    n: usize,
    params: &mut [Array2<f64>],
    cfg: &TrainConfig,
    rng: &mut SimRng,
    step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Array2<f64>], &[usize], &mut SimRng) -> Result<(f64, Vec<Array2<f64>>)>,
{
    minibatch_train_observed(n, params, cfg, rng, step, |_, _| Ok(()))
}

/// [`minibatch_train`] that hands the parameters to `on_epoch` after every
/// epoch.
pub fn minibatch_train_observed<F, O>(
    n: usize,
    params: &mut [Array2<f64>],
    cfg: &TrainConfig,
    rng: &mut SimRng,
    mut step: F,
    mut on_epoch: O,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Array2<f64>], &[usize], &mut SimRng) -> Result<(f64, Vec<Array2<f64>>)>,
    O: FnMut(usize, &[Array2<f64>]) -> Result<()>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params,
    );
    let schedule = StepSchedule::for_epochs(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.step_decay {
            adam.set_lr(schedule.lr_at(cfg.lr, epoch));
        }
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let wrap = |e: Error| Error::Training {
                epoch,
                batch,
                detail: e.to_string(),
            };
            let (loss, grads) = step(params, idx, rng).map_err(wrap)?;
            adam.step(params, &grads).map_err(wrap)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
        on_epoch(epoch, params)?;
    }
    Ok(trace)
}
