use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight decay added to the gradient: `g ← g + l2·θ`.
    pub l2: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, l2: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice in place.
///
/// `t` is the 1-based step number.
pub fn adam_step(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i] + cfg.l2 * theta[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam moments for every tensor of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        if config.l2 < 0.0 {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", config.l2)));
        }
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Ok(Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; parameters without a gradient see a zero gradient
    /// (weight decay still applies).
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        self.t += 1;
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let value = store.value_mut(id).data_mut();
            let zero;
            let g = match grads.get(id) {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; value.len()];
                    &zero
                }
            };
            adam_step(value, g, &mut self.m[slot], &mut self.v[slot], self.t, &self.config);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut theta = vec![0.3, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=5 {
            adam_step(&mut theta, &[0.0, 0.0], &mut m, &mut v, t, &AdamConfig::new(0.01, 0.0));
        }
        assert_eq!(theta, vec![0.3, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut theta = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut theta, &[1.0], &mut m, &mut v, 1, &AdamConfig::new(0.01, 0.0));
        // m̂ = 1, v̂ = 1 at t = 1.
        let expected = -0.01 * (1.0 / (1.0 + 1e-8));
        assert!((theta[0] - expected).abs() < 1e-15);
    }
}
