use super::ratios::{lamb_trust_ratio, merit_trust_ratios, safe_ratio, TrustRatios};
use super::{HyperParams, OneDimPolicy, OptimState};
use crate::error::{Error, Result};
use crate::tensor::{l2_norm, max_norm, Tensor};

/// Norm used for a weight-wise trust ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Max,
    L2,
}

impl Norm {
    fn apply(self, xs: &[f64]) -> Result<f64> {
        match self {
            Norm::Max => max_norm(xs),
            Norm::L2 => l2_norm(xs),
        }
    }
}

/// What a MERIT step did to one tensor.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// `s ∘ (u + λw)` before clipping.
    pub pre_clip: Tensor,
    /// Per-element scale `s` actually applied.
    pub scale: Tensor,
    /// Full ratio breakdown for matrix parameters.
    pub ratios: Option<TrustRatios>,
}

fn check_shapes(w: &Tensor, g: &Tensor, state: &OptimState) -> Result<()> {
    w.expect_same_shape(g)?;
    if state.m.shape() != w.shape() || state.v.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "optimizer state shape {:?} does not match parameter shape {:?}",
            state.m.shape(),
            w.shape()
        )));
    }
    Ok(())
}

fn accumulate(state: &mut OptimState, g: &Tensor, hp: &HyperParams) {
    let (b1, b2) = (hp.beta1, hp.beta2);
    state.step += 1;
    for (m, &gi) in state.m.data_mut().iter_mut().zip(g.data()) {
        *m = b1 * *m + (1.0 - b1) * gi;
    }
    for (v, &gi) in state.v.data_mut().iter_mut().zip(g.data()) {
        *v = b2 * *v + (1.0 - b2) * gi * gi;
    }
}

/// Update both moments in place and return `u = m / (sqrt(v) + eps)` without
/// bias correction.
pub fn update_moments(state: &mut OptimState, g: &Tensor, hp: &HyperParams) -> Result<Tensor> {
    if state.m.shape() != g.shape() || state.v.shape() != g.shape() {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match optimizer state {:?}",
            g.shape(),
            state.m.shape()
        )));
    }
    accumulate(state, g, hp);
    let u = state
        .m
        .data()
        .iter()
        .zip(state.v.data())
        .map(|(&m, &v)| m / (v.sqrt() + hp.eps))
        .collect();
    Ok(Tensor::from_parts_unchecked(g.shape().to_vec(), u))
}

/// `u + λw`
fn decayed_update(u: &Tensor, w: &Tensor, lambda: f64) -> Tensor {
    let d = u
        .data()
        .iter()
        .zip(w.data())
        .map(|(&ui, &wi)| ui + lambda * wi)
        .collect();
    Tensor::from_parts_unchecked(w.shape().to_vec(), d)
}

fn apply_scaled(w: &mut Tensor, d: &Tensor, ratio: f64, lr: f64) {
    for (wi, &di) in w.data_mut().iter_mut().zip(d.data()) {
        *wi -= lr * (ratio * di);
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay:
/// `w ← w − lr·(m̂/(√v̂+ε) + λw)`.
pub fn adamw_step(w: &mut Tensor, g: &Tensor, state: &mut OptimState, hp: &HyperParams, lr: f64) -> Result<()> {
    check_shapes(w, g, state)?;
    accumulate(state, g, hp);
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for ((wi, &m), &v) in w.data_mut().iter_mut().zip(state.m.data()).zip(state.v.data()) {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *wi -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *wi);
    }
    Ok(())
}

/// LAMB: `w ← w − lr·R·(u+λw)` with the l2 trust ratio `R`.
pub fn lamb_step(w: &mut Tensor, g: &Tensor, state: &mut OptimState, hp: &HyperParams, lr: f64) -> Result<()> {
    check_shapes(w, g, state)?;
    let u = update_moments(state, g, hp)?;
    let d = decayed_update(&u, w, hp.weight_decay);
    let ratio = if is_exempt(w, hp) {
        1.0
    } else {
        lamb_trust_ratio(w, &d)?
    };
    apply_scaled(w, &d, ratio, lr);
    Ok(())
}

/// maxLAMB: LAMB with the max norm in the trust ratio; no element-wise
/// ratio and no clipping.
pub fn maxlamb_step(w: &mut Tensor, g: &Tensor, state: &mut OptimState, hp: &HyperParams, lr: f64) -> Result<()> {
    maxlamb_step_with_norm(w, g, state, hp, lr, Norm::Max)
}

/// Weight-wise trust-ratio step with a selectable norm. `Norm::Max` is
/// maxLAMB; `Norm::L2` must agree with [`lamb_step`].
pub fn maxlamb_step_with_norm(
    w: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    hp: &HyperParams,
    lr: f64,
    norm: Norm,
) -> Result<()> {
    check_shapes(w, g, state)?;
    let u = update_moments(state, g, hp)?;
    let d = decayed_update(&u, w, hp.weight_decay);
    let ratio = if is_exempt(w, hp) {
        1.0
    } else {
        safe_ratio(norm.apply(w.data())?, norm.apply(d.data())?)
    };
    apply_scaled(w, &d, ratio, lr);
    Ok(())
}

/// MERIT: `w ← w − lr·clip(s ∘ (u+λw), clip_threshold)`.
///
/// Matrices get the element-wise ratio `s`. Other tensors get the
/// weight-wise max-norm ratio (or 1 under [`OneDimPolicy::Exempt`]);
/// tensors with more than two axes are viewed as `[shape[0], rest]`.
/// `hp.merit` switches off individual components.
pub fn merit_step(
    w: &mut Tensor,
    g: &Tensor,
    state: &mut OptimState,
    hp: &HyperParams,
    lr: f64,
) -> Result<StepDiagnostics> {
    check_shapes(w, g, state)?;
    let u = update_moments(state, g, hp)?;
    let d = decayed_update(&u, w, hp.weight_decay);
    merit_apply(w, &d, hp, lr)
}

/// The ratio and clipping half of [`merit_step`], applied to a given
/// direction `d = u + λw`.
pub fn merit_apply(w: &mut Tensor, d: &Tensor, hp: &HyperParams, lr: f64) -> Result<StepDiagnostics> {
    w.expect_same_shape(d)?;
    let variant = hp.merit;

    let (scale, ratios) = if w.ndim() >= 2 {
        let rows = w.shape()[0];
        let cols = w.numel() / rows;
        let wm = Tensor::from_parts_unchecked(vec![rows, cols], w.data().to_vec());
        let dm = Tensor::from_parts_unchecked(vec![rows, cols], d.data().to_vec());
        let tr = merit_trust_ratios(&wm, &dm)?;
        let s: Vec<f64> = if !variant.elementwise {
            vec![tr.b; w.numel()]
        } else if variant.weight_bound {
            tr.s.data().to_vec()
        } else {
            let mut s = Vec::with_capacity(w.numel());
            for &ri in tr.r.data() {
                for &cj in tr.c.data() {
                    s.push(ri.max(cj));
                }
            }
            s
        };
        (Tensor::from_parts_unchecked(w.shape().to_vec(), s), Some(tr))
    } else {
        let b = if hp.one_dim == OneDimPolicy::Exempt {
            1.0
        } else {
            safe_ratio(max_norm(w.data())?, max_norm(d.data())?)
        };
        (Tensor::filled(w.shape(), b), None)
    };

    let pre: Vec<f64> = scale.data().iter().zip(d.data()).map(|(&s, &di)| s * di).collect();
    let c = hp.clip_threshold;
    for (wi, &p) in w.data_mut().iter_mut().zip(&pre) {
        let upd = if variant.clip { p.clamp(-c, c) } else { p };
        *wi -= lr * upd;
    }

    Ok(StepDiagnostics {
        pre_clip: Tensor::from_parts_unchecked(w.shape().to_vec(), pre),
        scale,
        ratios,
    })
}

fn is_exempt(w: &Tensor, hp: &HyperParams) -> bool {
    w.ndim() < 2 && hp.one_dim == OneDimPolicy::Exempt
}
