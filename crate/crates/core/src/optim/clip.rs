use crate::error::{Error, Result};
use crate::params::Params;

/// Rescale every gradient by `threshold / norm` when the global l2 norm
/// exceeds `threshold`. Returns the norm measured before scaling.
pub fn global_grad_clip(grads: &mut Params, threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let norm = grads.l2_norm();
    if norm > threshold {
        grads.scale_in_place(threshold / norm);
    }
    Ok(norm)
}
