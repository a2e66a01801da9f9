//! Variational mutual-information regularizer between the main encoder's
//! latent z₂ and the frozen autoencoder latent z₁.
//!
//! The posterior q(z₁|z₂) is Gaussian with mean μ(z₂) from a 3×3
//! convolution and one standard deviation per channel,
//! `σ_c = 1/(1 + exp(Σ_{H,W} z₂[c])) + ε`. Only the expected log-likelihood
//! is optimized: the entropy of z₁ does not depend on the trainable
//! parameters and the dropped KL term is non-negative, so maximizing
//! log q maximizes a lower bound on the mutual information.

use pat_tensor::{Element, Graph, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::params::{Bound, ParamStore};

/// `log(2π)/2`.
pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Bound on the per-channel sum before it is exponentiated.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiConfig {
    /// Weight λ of the regularizer.
    pub lambda: f64,
    /// Floor ε added to every σ.
    pub epsilon: f64,
    /// Divide −log q by C·H·W before weighting.
    pub normalize: bool,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            lambda: 1.0,
            epsilon: 1.0,
            normalize: true,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// The trainable mean map μ(z₂).
#[derive(Debug, Clone)]
pub struct MiHead {
    pub mu: Conv,
    channels: usize,
}

impl MiHead {
    /// A head over `channels` latent channels, initialized to the identity
    /// map (delta kernel, zero bias) so that μ(z₂) = z₂ at the start.
    pub fn init<T: Element, R: Rng>(rng: &mut R, channels: usize) -> (MiHead, ParamStore<T>) {
        let mut store = ParamStore::new();
        let mu = Conv::new(&mut store, rng, "mi.mu", channels, channels, 3);
        let w = &mut store.tensors_mut()[mu.w];
        w.data_mut().fill(T::zero());
        for c in 0..channels {
            w.data_mut()[(c * channels + c) * 9 + 4] = T::one();
        }
        (MiHead { mu, channels }, store)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mean<T: Element>(&self, g: &mut Graph<T>, p: &Bound, z2: Var) -> Result<Var> {
        let c = g.shape(z2).get(1).copied();
        if c != Some(self.channels) {
            return Err(Error::Architecture(format!(
                "posterior head expects {} latent channels, got shape {:?}",
                self.channels,
                g.shape(z2)
            )));
        }
        self.mu.forward(g, p, z2)
    }
}

/// `σ [B,C]` of a latent `[B,C,H,W]`; `1/(1+e^S) = sigmoid(−S)`.
pub fn sigma<T: Element>(g: &mut Graph<T>, z2: Var, epsilon: f64) -> Result<Var> {
    let s = g.spatial_sum(z2)?;
    let s = g.clamp(s, -EXP_CLAMP, EXP_CLAMP);
    let s = g.neg(s);
    let q = g.sigmoid(s);
    Ok(g.add_scalar(q, epsilon))
}

/// Batch mean of −log q(z₁|z₂) for `z1`, `mu` of shape `[B,C,H,W]` and
/// `sigma` of shape `[B,C]`.
pub fn neg_log_q<T: Element>(g: &mut Graph<T>, z1: Var, mu: Var, sigma: Var) -> Result<Var> {
    if g.shape(z1) != g.shape(mu) {
        return Err(Error::Architecture(format!(
            "latent shapes differ: z₁ {:?} vs μ(z₂) {:?}",
            g.shape(z1),
            g.shape(mu)
        )));
    }
    let (b, c, _, _) = g.value(z1).dims4()?;
    if g.shape(sigma) != [b, c] {
        return Err(Error::Architecture(format!("σ has shape {:?}, expected [{b}, {c}]", g.shape(sigma))));
    }
    let d = g.sub(z1, mu)?;
    let d2 = g.square(d);
    let ss = g.spatial_sum(d2)?;
    let var2 = g.square(sigma);
    let var2 = g.scale(var2, 2.0);
    let quad = g.div(ss, var2)?;
    let log_sigma = g.log(sigma);
    let per = g.add(quad, log_sigma)?;
    let total = g.sum(per);
    let mean = g.scale(total, 1.0 / b as f64);
    Ok(g.add_scalar(mean, c as f64 * HALF_LOG_2PI))
}

/// Components of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub mse: Var,
    pub neg_log_q: Option<Var>,
    pub total: Var,
}

/// Inputs of the regularizer for one batch.
#[derive(Debug, Clone, Copy)]
pub struct MiInputs<'a> {
    /// Frozen prior latent z₁.
    pub z1: Var,
    /// Main encoder latent z₂.
    pub z2: Var,
    pub head: &'a MiHead,
    pub head_params: &'a Bound,
}

/// `MSE(ŷ, y) + λ·(−log q)/(C·H·W)`, the per-element scaling dropped when
/// `cfg.normalize` is false. Without `mi` the objective is the MSE alone.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    y_hat: Var,
    y: Var,
    mi: Option<MiInputs<'_>>,
    cfg: &MiConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    if g.shape(y_hat) != g.shape(y) {
        return Err(Error::Architecture(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(y_hat),
            g.shape(y)
        )));
    }
    let d = g.sub(y_hat, y)?;
    let d2 = g.square(d);
    let mse = g.mean(d2);
    let Some(mi) = mi else {
        return Ok(LossTerms {
            mse,
            neg_log_q: None,
            total: mse,
        });
    };
    let mu = mi.head.mean(g, mi.head_params, mi.z2)?;
    let s = sigma(g, mi.z2, cfg.epsilon)?;
    let nlq = neg_log_q(g, mi.z1, mu, s)?;
    let per_elem: usize = g.shape(mi.z2)[1..].iter().product();
    let scale = if cfg.normalize { cfg.lambda / per_elem as f64 } else { cfg.lambda };
    let reg = g.scale(nlq, scale);
    let total = g.add(mse, reg)?;
    Ok(LossTerms {
        mse,
        neg_log_q: Some(nlq),
        total,
    })
}
