//! MERIT: a large-batch optimizer that scales each update element by a
//! max-norm trust ratio taken over its row, its column and the whole weight
//! matrix, then clips the scaled update to unit magnitude.
//!
//! The crate bundles the optimizer with its baselines (AdamW, LAMB,
//! maxLAMB), a small byte-level transformer with hand-written gradients to
//! train them on, the measurement instruments used to study attention-logit
//! growth and curvature, and a deterministic training harness.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod nanoformer;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Coordinate, Params};
pub use rng::SeededRng;
pub use tensor::Tensor;
