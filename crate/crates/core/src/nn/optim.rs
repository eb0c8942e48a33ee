use serde::{Deserialize, Serialize};

use super::{Gradient, NetworkParams, NetworkSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or Adam state over the flat parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    algorithm: Algorithm,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, spec: &NetworkSpec) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let n = match algorithm {
            Algorithm::Sgd => 0,
            Algorithm::Adam { .. } => spec.param_count(),
        };
        Ok(Self {
            algorithm,
            learning_rate,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grad: &Gradient) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::shape("gradient does not match parameters"));
        }
        if let Some(idx) = grad
            .layers()
            .iter()
            .position(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite { layer: idx });
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.algorithm {
            Algorithm::Sgd => {
                for (p, g) in params.iter_flat_mut().zip(grad.iter_flat()) {
                    *p -= lr * g;
                }
            }
            Algorithm::Adam { beta1, beta2, eps } => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::shape("optimizer moments do not match parameters"));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, &g), m), v) in params
                    .iter_flat_mut()
                    .zip(grad.iter_flat())
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Flat boolean mask over the parameters; `true` marks a frozen coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    frozen: Vec<bool>,
}

impl FreezeMask {
    /// Nothing frozen.
    pub fn none(spec: &NetworkSpec) -> Self {
        Self {
            frozen: vec![false; spec.param_count()],
        }
    }

    /// Freezes all of `θ_W` and `θ_b`.
    pub fn first_layer(spec: &NetworkSpec) -> Self {
        let mut mask = Self::none(spec);
        let (d, k) = spec.layer_dims()[0];
        mask.frozen[..d * k + k].iter_mut().for_each(|f| *f = true);
        mask
    }

    /// Freezes columns `0..z` of `θ_W` and all of `θ_b`.
    pub fn first_columns(spec: &NetworkSpec, z: usize) -> Self {
        let mut mask = Self::none(spec);
        let (d, k) = spec.layer_dims()[0];
        for i in 0..d {
            for j in 0..z.min(k) {
                mask.frozen[i * k + j] = true;
            }
        }
        mask.frozen[d * k..d * k + k]
            .iter_mut()
            .for_each(|f| *f = true);
        mask
    }

    pub fn from_flat(frozen: Vec<bool>) -> Self {
        Self { frozen }
    }

    pub fn as_flat(&self) -> &[bool] {
        &self.frozen
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    /// Zeroes the gradient on frozen coordinates, in place.
    pub fn apply(&self, grad: &mut Gradient) -> Result<()> {
        if grad.len() != self.frozen.len() {
            return Err(Error::shape("freeze mask does not match gradient"));
        }
        for (g, &f) in grad.iter_flat_mut().zip(&self.frozen) {
            if f {
                *g = 0.0;
            }
        }
        Ok(())
    }
}

pub fn freeze_mask_apply(grad: &Gradient, mask: &FreezeMask) -> Result<Gradient> {
    let mut out = grad.clone();
    mask.apply(&mut out)?;
    Ok(out)
}
