use serde::{Deserialize, Serialize};

use crate::{NumError, ParamStore, Scalar, Tensor};

/// Adam hyperparameters. The defaults are the transformer recipe that usually
/// accompanies a warmup schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using the gradients stored in `params`.
    ///
    /// Nothing is modified when any gradient is non-finite; the error names
    /// the first offending parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<(), NumError> {
        if self.m.len() != params.len() {
            return Err(NumError::Shape {
                op: "adam_step",
                detail: format!("state for {} parameters, store has {}", self.m.len(), params.len()),
            });
        }
        if let Some((_, p)) = params.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(NumError::NonFinite { param: p.name.clone() });
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = T::lit(1.0 - beta1.powi(t));
        let c2 = T::lit(1.0 - beta2.powi(t));
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one, lr, eps) = (T::one(), T::lit(lr), T::lit(eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (((w, m), v), &g) in p.value.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
