//! Deterministic training and evaluation.
//!
//! Every random choice (initialization, batch windows, synthetic data) is
//! drawn from a stream derived from the run seed and the step, so two runs
//! of the same config write identical metrics and checkpoints. Each step:
//! average the gradient over the micro-batches, clip its global norm, update
//! moments, apply trust ratios and the element clip, then update weights.

mod checkpoint;
mod config;
mod data;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{chinchilla_total_steps, DataSpec, Precision, SynthSpec, TrainConfig};
pub use data::{eval_batches, load_corpus, load_data, next_batch, synth_corpus, Split, Splits};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use train::{
    accumulate_grads, compare, evaluate, train, Session, TrainOutcome, CHECKPOINT_FILE, COMPARE_HEADER, METRICS_FILE,
};
