//! AdamW, LAMB, maxLAMB and MERIT kernels, the warmup-cosine schedule, and
//! global gradient-norm clipping.
//!
//! MERIT, LAMB and maxLAMB use raw (not bias-corrected) moments:
//! `u = m / (sqrt(v) + eps)`. AdamW uses the standard bias-corrected form.
//! In every trust-ratio optimizer the weight decay term enters the update
//! before the ratio is taken, so the ratio denominator is `|u + λw|`.

mod clip;
mod optimizer;
mod ratios;
mod schedule;
mod step;

pub use clip::global_grad_clip;
pub use optimizer::{Optimizer, OptimizerKind, StepReport, TensorTrigger};
pub use ratios::{lamb_trust_ratio, merit_trust_ratios, safe_ratio, TrustRatios};
pub use schedule::{cosine_lr, Schedule};
pub use step::{
    adamw_step, lamb_step, maxlamb_step, maxlamb_step_with_norm, merit_apply, merit_step, update_moments, Norm,
    StepDiagnostics,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parts of MERIT are active. The default is the full optimizer;
/// the other combinations reproduce the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeritVariant {
    /// Use per-element `max(r[i], c[j])` ratios. When off, every element
    /// gets the weight-wise ratio `b`.
    pub elementwise: bool,
    /// Bound element-wise ratios from below by `b`.
    pub weight_bound: bool,
    /// Clip the scaled update elementwise to `clip_threshold`.
    pub clip: bool,
}

impl Default for MeritVariant {
    fn default() -> Self {
        Self {
            elementwise: true,
            weight_bound: true,
            clip: true,
        }
    }
}

/// How trust-ratio optimizers treat tensors that are not matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneDimPolicy {
    /// Weight-wise ratio with the optimizer's own norm (clipping still
    /// applies under MERIT).
    #[default]
    WeightWise,
    /// Ratio fixed at 1.
    Exempt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Elementwise clip applied by MERIT; 1 in the reference algorithm.
    pub clip_threshold: f64,
    /// Threshold on the global l2 norm of the raw gradient.
    pub global_grad_clip: f64,
    pub merit: MeritVariant,
    pub one_dim: OneDimPolicy,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            peak_lr: 9e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_threshold: 1.0,
            global_grad_clip: 1.0,
            merit: MeritVariant::default(),
            one_dim: OneDimPolicy::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        };
        check(self.peak_lr > 0.0 && self.peak_lr.is_finite(), "hp.peak_lr must be > 0")?;
        check((0.0..1.0).contains(&self.beta1), "hp.beta1 must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "hp.beta2 must be in [0, 1)")?;
        check(self.eps > 0.0, "hp.eps must be > 0")?;
        check(self.weight_decay >= 0.0, "hp.weight_decay must be >= 0")?;
        check(self.clip_threshold > 0.0, "hp.clip_threshold must be > 0")?;
        check(self.global_grad_clip > 0.0, "hp.global_grad_clip must be > 0")?;
        Ok(())
    }
}

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Tensor,
    pub v: Tensor,
    /// Number of moment updates applied so far; the first update is step 1.
    pub step: u64,
}

impl OptimState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}
