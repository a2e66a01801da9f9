//! Adam with bias-corrected moments.

use pat_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Adam<T> {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// `θ ← θ − lr·m̂/(√v̂ + eps)` for every slot.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Architecture(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        if let Some((p, g)) = params.tensors().iter().zip(grads).find(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::Architecture(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::cast_f64(c.beta1), T::cast_f64(c.beta2));
        let (one_b1, one_b2) = (T::cast_f64(1.0 - c.beta1), T::cast_f64(1.0 - c.beta2));
        let bc1 = T::cast_f64(1.0 - c.beta1.powf(self.t as f64));
        let bc2 = T::cast_f64(1.0 - c.beta2.powf(self.t as f64));
        let (lr, eps) = (T::cast_f64(c.lr), T::cast_f64(c.eps));
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
