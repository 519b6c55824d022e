use serde::{Deserialize, Serialize};

use super::grad::Gradient;
use crate::engine::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one entry per trainable scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.num_trainable())
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected ADAM update over parallel parameter / gradient
    /// sequences. Nothing is modified if a gradient entry is non-finite.
    pub fn apply<'a, P>(&mut self, params: P, grads: &[f64], lr: f64, cfg: &AdamConfig) -> Result<()>
    where
        P: IntoIterator<Item = &'a mut f64>,
    {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "gradient has {} entries, optimizer tracks {}",
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient entry {i}"),
                step: self.step,
            });
        }
        let t = self.step + 1;
        let bias1 = 1.0 - cfg.beta1.powf(t as f64);
        let bias2 = 1.0 - cfg.beta2.powf(t as f64);
        let mut touched = 0;
        for (((p, &g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            touched += 1;
        }
        debug_assert_eq!(touched, grads.len());
        self.step = t;
        Ok(())
    }
}

pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grad: &Gradient,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.len() != params.num_trainable() {
        return Err(Error::invalid(format!(
            "optimizer state has {} entries, params have {}",
            state.len(),
            params.num_trainable()
        )));
    }
    let flat: Vec<f64> = grad.values().collect();
    state.apply(params.trainable_mut(), &flat, lr, cfg)
}
