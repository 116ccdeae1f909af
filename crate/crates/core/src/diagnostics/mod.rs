//! Instruments for looking inside a run: attention-logit bounds, the gap
//! between max and l2 norms, clip and lower-bound trigger rates, row/column
//! similarity of weights, learning-rate sweeps of the max attention logit,
//! and Hessian curvature probes.
//!
//! Similarity between rows (or columns) is the mean pairwise cosine
//! similarity of their absolute values. Curvature uses central differences
//! of the exact gradient for Hessian-vector products, power iteration for the
//! top eigenvalue and Rademacher probes for the trace.

mod bounds;
mod curvature;
pub mod report;
mod sweep;
mod triggers;

pub use bounds::{attention_logits, logit_upper_bound, max_row_abs_sum, norm_gap_ratio, rowcol_similarity};
pub use curvature::{
    hessian_vector_product, top_eigenvalue, CurvatureOptions, CurvatureReport, GradientOracle, ModelOracle,
    QuadraticFixture,
};
pub use sweep::{lr_logit_sweep, SweepRow};
pub use triggers::{
    bound_trigger_ratio, clip_trigger_ratio, count_bound_active, count_clipped, LayerTrigger, TriggerStats,
};
