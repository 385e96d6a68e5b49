use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept only for parameters
/// that were trainable when the state was created.
#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    step_count: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamWConfig) -> Self {
        let moments = params
            .iter()
            .filter(|(name, _)| !params.is_frozen(name))
            .map(|(name, t)| {
                (
                    name.to_string(),
                    (vec![T::zero(); t.len()], vec![T::zero(); t.len()]),
                )
            })
            .collect();
        Self {
            config,
            step_count: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update of every non-frozen parameter, then all gradients are cleared.
    ///
    /// Panics when a trainable parameter has no gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let lr = T::of(c.lr);
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let eps = T::of(c.eps);

        let frozen: Vec<String> = params.frozen().map(str::to_string).collect();
        for (name, tensor) in params.iter_mut() {
            if frozen.iter().any(|f| f == name) {
                continue;
            }
            let (m, v) = self
                .moments
                .get_mut(name)
                .unwrap_or_else(|| panic!("parameter {name:?} has no optimizer state"));
            let grad = tensor
                .grad()
                .unwrap_or_else(|| panic!("trainable parameter {name:?} has no gradient"))
                .to_vec();
            for (((p, g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                let m_hat = *m * inv_bc1;
                let v_hat = *v * inv_bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
    }
}
