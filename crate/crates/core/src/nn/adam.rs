use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub m: Params<F>,
    pub v: Params<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &Params<F>, config: AdamConfig) -> Self {
        Self {
            config,
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            step: 0,
        }
    }

    /// One bias-corrected update of the tensors selected by `trainable`.
    /// Unselected tensors and their moments are left alone.
    pub fn step(&mut self, params: &mut Params<F>, grads: &Params<F>, trainable: impl Fn(usize) -> bool) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = F::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (F::of(c.lr), F::of(c.eps));
        for (i, p) in params.tensors.iter_mut().enumerate() {
            if !trainable(i) {
                continue;
            }
            let (m, v, g) = (&mut self.m.tensors[i], &mut self.v.tensors[i], &grads.tensors[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (F::one() - b1) * g[j];
                v[j] = b2 * v[j] + (F::one() - b2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
