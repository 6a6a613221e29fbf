use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{param_err, Error, Result};

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    #[serde(skip)]
    pub first_moment: Vec<Vec<f64>>,
    #[serde(skip)]
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(params: &ParamSet, learning_rate: f64) -> Result<Self> {
        Self::with_hyper(
            params,
            learning_rate,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPSILON,
        )
    }

    pub fn with_hyper(
        params: &ParamSet,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let state = Self {
            step_count: 0,
            beta1,
            beta2,
            epsilon,
            learning_rate,
            first_moment: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(param_err!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1,
                self.beta2
            ));
        }
        if !(self.epsilon > 0.0) || !(self.learning_rate > 0.0) {
            return Err(param_err!(
                "Adam epsilon and learning rate must be positive, got {} and {}",
                self.epsilon,
                self.learning_rate
            ));
        }
        Ok(())
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(param_err!("learning rate must be positive, got {lr}"));
        }
        self.learning_rate = lr;
        Ok(())
    }
}

/// One Adam update over every parameter, then clears the gradients.
///
/// A parameter whose gradient is identically zero is left untouched,
/// moments included; such parameters did not take part in the step.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    state.validate()?;
    if state.first_moment.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} tensors, parameter set has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::State(format!("parameter `{}` has no gradient", p.name)))?;
        if g.shape() != p.value.shape() || state.first_moment[i].len() != p.value.numel() {
            return Err(Error::State(format!("shape mismatch for `{}`", p.name)));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);

    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad.take().expect("checked above");
        if g.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (k, w) in p.value.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
