//! End-to-end optimization of [`ModelParams`] over sampled episodes.
//!
//! Each mini-batch averages per-episode analytic gradients (computed in
//! parallel, reduced in episode order), takes one ADAM step with an
//! exponentially decayed learning rate, and every `eval_every` mini-batches
//! scores a frozen validation set. The parameters with the lowest
//! validation loss are returned.

mod adam;
mod grad;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use grad::{episode_gradient, episode_loss, loss_and_gradient, Gradient};
pub use gradcheck::{gradcheck, gradcheck_with, relative_error, GradcheckReport, REL_ERROR_FLOOR};

use serde::{Deserialize, Serialize};

use crate::engine::{DistanceKind, LabeledEpisode, ModelParams, DEFAULT_PROJ_DIM};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, tags};

pub const DEFAULT_LR: f64 = 0.0005;
pub const DEFAULT_MINIBATCHES: usize = 32_000;
pub const DEFAULT_MINIBATCH_SIZE: usize = 8;

/// Per-mini-batch factor that takes the learning rate to 0.1x over the
/// default schedule length.
pub fn default_decay() -> f64 {
    0.1f64.powf(1.0 / DEFAULT_MINIBATCHES as f64)
}

/// Anything that can hand the trainer one labeled episode at a time.
pub trait EpisodeSource {
    fn next_episode(&mut self) -> Result<LabeledEpisode>;
}

impl<F> EpisodeSource for F
where
    F: FnMut() -> Result<LabeledEpisode>,
{
    fn next_episode(&mut self) -> Result<LabeledEpisode> {
        self()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub total_minibatches: usize,
    pub minibatch_size: usize,
    pub decay: f64,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub val_episodes: usize,
    pub seed: u64,
    pub proj_dim: usize,
    pub distance: DistanceKind,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: DEFAULT_LR,
            total_minibatches: DEFAULT_MINIBATCHES,
            minibatch_size: DEFAULT_MINIBATCH_SIZE,
            decay: default_decay(),
            eval_every: 500,
            patience: 10,
            val_episodes: 1024,
            seed: 0,
            proj_dim: DEFAULT_PROJ_DIM,
            distance: DistanceKind::Euclidean,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch_size must be at least 1"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.val_episodes == 0 {
            return Err(Error::invalid("val_episodes must be at least 1"));
        }
        if self.proj_dim == 0 {
            return Err(Error::invalid("proj_dim must be at least 1"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon.is_nan() || a.epsilon < 0.0 {
            return Err(Error::invalid("ADAM betas must lie in [0, 1) and epsilon must be >= 0"));
        }
        Ok(())
    }

    /// `initial_lr * decay^step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.initial_lr * self.decay.powi(step as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    /// Mini-batches completed when the evaluation ran.
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean episode loss of every mini-batch, in order.
    pub loss_curve: Vec<f64>,
    pub validation_curve: Vec<ValidationPoint>,
    pub best_step: usize,
    pub best_validation_loss: f64,
    pub minibatches_run: usize,
    pub stopped_early: bool,
    /// Parameters at `best_step`.
    pub params: ModelParams,
    /// Optimizer state after the last mini-batch run.
    pub optimizer: OptimizerState,
}

/// Mean loss over `episodes`, summed in slice order.
pub fn mean_loss(params: &ModelParams, episodes: &[LabeledEpisode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::invalid("no episodes to evaluate"));
    }
    let losses = par::try_map(episodes, |ep| episode_loss(params, ep))?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Loss and gradient averaged over a mini-batch.
pub fn batch_loss_and_gradient(params: &ModelParams, batch: &[LabeledEpisode]) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty mini-batch"));
    }
    let results = par::try_map(batch, |ep| loss_and_gradient(params, ep))?;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / results.len() as f64;
    let grads: Vec<Gradient> = results.into_iter().map(|(_, g)| g).collect();
    Ok((loss, Gradient::mean(&grads).expect("non-empty batch")))
}

/// Trains from the seeded default initialization.
pub fn train(
    config: &TrainConfig,
    dim: usize,
    train_source: &mut dyn EpisodeSource,
    val_source: &mut dyn EpisodeSource,
) -> Result<TrainReport> {
    config.validate()?;
    let mut init_rng = rng::stream(config.seed, &[tags::INIT]);
    let params = ModelParams::init_random(dim, config.proj_dim, &mut init_rng)?.with_distance(config.distance);
    let state = OptimizerState::for_params(&params);
    train_from(config, params, state, train_source, val_source)
}

pub fn train_from(
    config: &TrainConfig,
    mut params: ModelParams,
    mut state: OptimizerState,
    train_source: &mut dyn EpisodeSource,
    val_source: &mut dyn EpisodeSource,
) -> Result<TrainReport> {
    config.validate()?;
    let val_set = (0..config.val_episodes)
        .map(|_| val_source.next_episode())
        .collect::<Result<Vec<_>>>()?;

    let validate = |params: &ModelParams, step: usize| -> Result<f64> {
        let loss = mean_loss(params, &val_set)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss".into(),
                step: step as u64,
            });
        }
        Ok(loss)
    };

    let initial = validate(&params, 0)?;
    let mut validation_curve = vec![ValidationPoint { step: 0, loss: initial }];
    let mut best = (initial, 0, params.clone());
    let mut loss_curve = Vec::with_capacity(config.total_minibatches);
    let mut stale = 0;
    let mut stopped_early = false;

    for step in 0..config.total_minibatches {
        let batch = (0..config.minibatch_size)
            .map(|_| train_source.next_episode())
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_loss_and_gradient(&params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "training loss".into(),
                step: step as u64,
            });
        }
        adam_step(&mut state, &mut params, &grad, config.lr_at(step), &config.adam).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                step: step as u64,
            },
            other => other,
        })?;
        loss_curve.push(loss);

        let done = step + 1;
        if done % config.eval_every == 0 || done == config.total_minibatches {
            let val = validate(&params, done)?;
            validation_curve.push(ValidationPoint { step: done, loss: val });
            if val < best.0 {
                best = (val, done, params.clone());
                stale = 0;
            } else {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_validation_loss, best_step, best_params) = best;
    Ok(TrainReport {
        minibatches_run: loss_curve.len(),
        loss_curve,
        validation_curve,
        best_step,
        best_validation_loss,
        stopped_early,
        params: best_params,
        optimizer: state,
    })
}
