use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{next_batch, Session, TrainConfig};
use crate::nanoformer::forward;
use crate::optim::OptimizerKind;

/// Stream label for the fixed probe batch; training steps start at 1, so
/// step 0 never collides with a training draw.
const PROBE_STEP: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lr: f64,
    /// Max attention logit per layer on the probe batch before training.
    pub initial_mal: Vec<f64>,
    /// Largest value seen per layer over the run, including the start.
    pub peak_mal: Vec<f64>,
    pub final_train_loss: Option<f64>,
    pub diverged: bool,
}

/// Train a fresh model at each learning rate and track the max attention
/// logit of every layer on one fixed probe batch. Rows come back sorted by
/// learning rate; a run whose loss stops being finite is flagged, not raised.
pub fn lr_logit_sweep(cfg: &TrainConfig, optimizer: OptimizerKind, lrs: &[f64], steps: u64) -> Result<Vec<SweepRow>> {
    if lrs.is_empty() {
        return Err(Error::Domain("learning-rate list is empty".into()));
    }
    if steps == 0 {
        return Err(Error::Domain("sweep needs at least one step".into()));
    }
    if let Some(bad) = lrs.iter().find(|l| l.is_nan() || **l < 0.0 || !l.is_finite()) {
        return Err(Error::Domain(format!(
            "learning rates must be finite and >= 0, got {bad}"
        )));
    }
    let mut sorted = lrs.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut run_cfg = cfg.clone();
    run_cfg.optimizer = optimizer;
    run_cfg.schedule.total_steps = steps;

    let mut rows = Vec::with_capacity(sorted.len());
    for lr in sorted {
        let mut session = Session::new(&run_cfg)?;
        let (px, _) = next_batch(
            &session.data().train,
            run_cfg.seed,
            PROBE_STEP,
            0,
            run_cfg.batch_size_sequences,
            run_cfg.model.context_len,
        )?;
        let probe = |s: &Session| -> Result<Vec<f64>> {
            Ok(forward(&run_cfg.model, s.params(), &px)?
                .probes
                .iter()
                .map(|p| p.max_logit)
                .collect())
        };
        let initial = probe(&session)?;
        let mut peak = initial.clone();
        let mut diverged = false;
        let mut final_loss = None;
        for _ in 0..steps {
            let rec = session.step(lr)?;
            final_loss = Some(rec.train_loss);
            if rec.diverged {
                diverged = true;
                break;
            }
            let now = probe(&session)?;
            if now.iter().any(|v| !v.is_finite()) {
                diverged = true;
                break;
            }
            for (p, v) in peak.iter_mut().zip(now) {
                *p = p.max(v);
            }
        }
        log::info!(
            "lr {lr:e}: peak max logit {peak:?}{}",
            if diverged { " (diverged)" } else { "" }
        );
        rows.push(SweepRow {
            lr,
            initial_mal: initial,
            peak_mal: peak,
            final_train_loss: final_loss.filter(|l| l.is_finite()),
            diverged,
        });
    }
    Ok(rows)
}
