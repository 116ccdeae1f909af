use serde::{Deserialize, Serialize};

use crate::nanoformer::layer_of;
use crate::optim::{StepReport, TrustRatios};
use crate::tensor::Tensor;

/// Elements with `|x| > threshold`.
pub fn count_clipped(t: &Tensor, threshold: f64) -> usize {
    t.data().iter().filter(|x| x.abs() > threshold).count()
}

/// Positions `(i, j)` where `b > max(r[i], c[j])`, so the weight-wise lower
/// bound sets the element ratio. Ties do not count.
pub fn count_bound_active(tr: &TrustRatios) -> usize {
    let (r, c) = (tr.r.data(), tr.c.data());
    r.iter()
        .map(|&ri| c.iter().filter(|&&cj| tr.b > ri.max(cj)).count())
        .sum()
}

/// Fraction of pre-clip update elements that the unit clip changes.
pub fn clip_trigger_ratio(pre_clip: &Tensor) -> f64 {
    count_clipped(pre_clip, 1.0) as f64 / pre_clip.numel() as f64
}

/// Fraction of positions where the weight-wise ratio is the binding term.
pub fn bound_trigger_ratio(tr: &TrustRatios) -> f64 {
    count_bound_active(tr) as f64 / (tr.r.numel() * tr.c.numel()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrigger {
    pub layer: usize,
    pub clip_fraction: f64,
    pub bound_fraction: f64,
}

/// Clip and bound trigger fractions for one step, pooled over all tensors and
/// broken down by transformer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerStats {
    pub clip_fraction: f64,
    pub bound_fraction: f64,
    pub per_layer: Vec<LayerTrigger>,
}

impl TriggerStats {
    /// `None` when the report carries no triggers (non-MERIT optimizers).
    pub fn from_report(report: &StepReport) -> Option<Self> {
        if report.triggers.is_empty() {
            return None;
        }
        let mut total = [0usize; 4];
        let mut layers: std::collections::BTreeMap<usize, [usize; 4]> = Default::default();
        for (name, t) in &report.triggers {
            let counts = [t.clipped, t.elements, t.bound_active, t.bound_elements];
            for (acc, v) in total.iter_mut().zip(counts) {
                *acc += v;
            }
            if let Some(l) = layer_of(name) {
                let slot = layers.entry(l).or_default();
                for (acc, v) in slot.iter_mut().zip(counts) {
                    *acc += v;
                }
            }
        }
        let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Some(Self {
            clip_fraction: frac(total[0], total[1]),
            bound_fraction: frac(total[2], total[3]),
            per_layer: layers
                .into_iter()
                .map(|(layer, c)| LayerTrigger {
                    layer,
                    clip_fraction: frac(c[0], c[1]),
                    bound_fraction: frac(c[2], c[3]),
                })
                .collect(),
        })
    }
}
