use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::Checkpoint;
use super::config::{Precision, TrainConfig};
use super::data::{eval_batches, load_data, next_batch, Split, Splits};
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::diagnostics::TriggerStats;
use crate::error::{Error, Result};
use crate::nanoformer::{init_params, loss, loss_and_grads, ModelConfig, TokenBatch};
use crate::optim::{cosine_lr, global_grad_clip, Optimizer, Schedule};
use crate::params::Params;
use crate::rng::SeededRng;

const INIT_STREAM: u64 = 0x696e_6974;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "final.ckpt";

/// Mean loss and gradient over `grad_accum_steps` micro-batches.
pub fn accumulate_grads(
    model: &ModelConfig,
    params: &Params,
    micro_batches: &[(TokenBatch, TokenBatch)],
) -> Result<(f64, Params, Vec<f64>, f64)> {
    let k = micro_batches.len();
    if k == 0 {
        return Err(Error::Input("no micro-batches".into()));
    }
    let mut grads = params.zeros_like();
    let mut total_loss = 0.0;
    let mut max_logit = vec![f64::NEG_INFINITY; model.n_layer];
    let mut entropy = 0.0;
    for (x, y) in micro_batches {
        let lg = loss_and_grads(model, params, x, y)?;
        total_loss += lg.loss;
        grads.axpy(1.0, &lg.grads)?;
        for p in &lg.probes {
            max_logit[p.layer_index] = max_logit[p.layer_index].max(p.max_logit);
            entropy += p.attention_entropy;
        }
    }
    grads.scale_in_place(1.0 / k as f64);
    Ok((
        total_loss / k as f64,
        grads,
        max_logit,
        entropy / (k * model.n_layer) as f64,
    ))
}

fn round_to_f32(t: &mut crate::tensor::Tensor) {
    for x in t.data_mut() {
        *x = f64::from(*x as f32);
    }
}

/// Model, optimizer and data for one run, advanced one step at a time.
pub struct Session {
    cfg: TrainConfig,
    data: Splits,
    params: Params,
    optimizer: Optimizer,
    step: u64,
    start: Instant,
}

impl Session {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let data = load_data(&cfg.data)?;
        for (split, name) in [(Split::Train, "training"), (Split::Val, "validation")] {
            if data.get(split).len() < cfg.model.context_len + 1 {
                return Err(Error::Config(format!(
                    "{name} split has {} tokens, fewer than model.context_len + 1",
                    data.get(split).len()
                )));
            }
        }
        if let Some(&bad) = data
            .train
            .iter()
            .chain(&data.val)
            .find(|&&t| t as usize >= cfg.model.vocab_size)
        {
            return Err(Error::Config(format!(
                "data holds token {bad}, outside model.vocab_size"
            )));
        }
        let mut params = init_params(&cfg.model, &mut SeededRng::derived(cfg.seed, &[INIT_STREAM]))?;
        if cfg.precision == Precision::F32 {
            for (_, t) in params.iter_mut() {
                round_to_f32(t);
            }
        }
        let optimizer = Optimizer::new(cfg.optimizer, cfg.hp.clone(), &params)?;
        Ok(Self {
            cfg: cfg.clone(),
            data,
            params,
            optimizer,
            step: 0,
            start: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Splits {
        &self.data
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn schedule(&self) -> &Schedule {
        &self.cfg.schedule
    }

    pub fn micro_batches(&self, step: u64) -> Result<Vec<(TokenBatch, TokenBatch)>> {
        (0..self.cfg.grad_accum_steps as u64)
            .map(|micro| {
                next_batch(
                    &self.data.train,
                    self.cfg.seed,
                    step,
                    micro,
                    self.cfg.batch_size_sequences,
                    self.cfg.model.context_len,
                )
            })
            .collect()
    }

    /// Advance one step using `peak_lr` on the configured schedule. The
    /// returned record has `diverged` set when the loss, gradient or updated
    /// weights stop being finite; the session should not be stepped again.
    pub fn step(&mut self, peak_lr: f64) -> Result<MetricsRecord> {
        let k = self.step + 1;
        let lr = cosine_lr(k, &self.cfg.schedule, peak_lr)?;
        let batches = self.micro_batches(k)?;
        let (train_loss, mut grads, per_layer_max_logit, entropy) =
            accumulate_grads(&self.cfg.model, &self.params, &batches)?;
        self.step = k;
        let mut rec = MetricsRecord {
            step: k,
            lr,
            train_loss,
            val_loss: None,
            per_layer_max_logit,
            mean_attention_entropy: entropy,
            clip_fraction: None,
            bound_fraction: None,
            per_layer_clip_fraction: None,
            per_layer_bound_fraction: None,
            global_grad_norm: f64::NAN,
            tokens_per_step: self.cfg.tokens_per_step(),
            wall_ms: if self.cfg.log_wall_time {
                self.start.elapsed().as_millis() as u64
            } else {
                0
            },
            diverged: false,
        };
        if !train_loss.is_finite() || !grads.all_finite() {
            rec.diverged = true;
            return Ok(rec);
        }
        rec.global_grad_norm = global_grad_clip(&mut grads, self.cfg.hp.global_grad_clip)?;
        let report = self.optimizer.step(&mut self.params, &grads, lr)?;
        if let Some(stats) = TriggerStats::from_report(&report) {
            rec.clip_fraction = Some(stats.clip_fraction);
            rec.bound_fraction = Some(stats.bound_fraction);
            rec.per_layer_clip_fraction = Some(stats.per_layer.iter().map(|l| l.clip_fraction).collect());
            rec.per_layer_bound_fraction = Some(stats.per_layer.iter().map(|l| l.bound_fraction).collect());
        }
        if self.cfg.precision == Precision::F32 {
            for (_, t) in self.params.iter_mut() {
                round_to_f32(t);
            }
            for st in self.optimizer.states_mut().values_mut() {
                round_to_f32(&mut st.m);
                round_to_f32(&mut st.v);
            }
        }
        if !self.params.all_finite() {
            rec.diverged = true;
        }
        Ok(rec)
    }

    pub fn val_loss(&self) -> Result<f64> {
        mean_loss(&self.cfg, &self.params, &self.data.val)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.cfg.model.clone(),
            optimizer: self.cfg.optimizer,
            hp: self.cfg.hp.clone(),
            step: self.step,
            precision: self.cfg.precision,
            params: self.params.clone(),
            states: self.optimizer.states().clone(),
        }
    }
}

fn mean_loss(cfg: &TrainConfig, params: &Params, split: &[u32]) -> Result<f64> {
    let batches = eval_batches(
        split,
        cfg.eval_sequences,
        cfg.batch_size_sequences,
        cfg.model.context_len,
    )?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in &batches {
        total += loss(&cfg.model, params, x, y)? * x.batch() as f64;
        count += x.batch();
    }
    Ok(total / count as f64)
}

/// Mean cross-entropy of a checkpoint over the fixed evaluation windows of a
/// split (non-overlapping, from the start of the split).
pub fn evaluate(ckpt: &Checkpoint, cfg: &TrainConfig, split: Split) -> Result<f64> {
    if ckpt.model != cfg.model {
        return Err(Error::Config("checkpoint model differs from config model".into()));
    }
    let data = load_data(&cfg.data)?;
    mean_loss(cfg, &ckpt.params, data.get(split))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
    pub diverged: bool,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

/// Run `cfg.schedule.total_steps` steps, writing `metrics.jsonl` and
/// `final.ckpt` under `cfg.out_dir`. A non-finite loss stops the run; the
/// last metrics line then carries `"diverged": true`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut session = Session::new(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let checkpoint_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let total = cfg.schedule.total_steps;
    log::info!(
        "training {} for {total} steps, {} tokens/step",
        cfg.run_label(),
        cfg.tokens_per_step()
    );

    let mut records = Vec::new();
    let mut diverged = false;
    let mut final_val = None;
    while session.step_count() < total {
        let mut rec = session.step(cfg.hp.peak_lr)?;
        let k = rec.step;
        if rec.diverged {
            log::warn!("{} diverged at step {k}", cfg.run_label());
            writer.write(&rec)?;
            records.push(rec);
            diverged = true;
            break;
        }
        let eval_now = k % cfg.eval_interval == 0 || k == total;
        if eval_now {
            let v = session.val_loss()?;
            rec.val_loss = Some(v);
            final_val = Some(v);
            if !v.is_finite() {
                rec.diverged = true;
            }
        }
        if eval_now || k % cfg.log_interval == 0 || rec.diverged {
            log::debug!("step {k} lr {:.3e} loss {:.4}", rec.lr, rec.train_loss);
            writer.write(&rec)?;
        }
        diverged = rec.diverged;
        records.push(rec);
        if diverged {
            break;
        }
    }
    writer.finish()?;
    let checkpoint = session.checkpoint();
    if checkpoint.params.all_finite() && checkpoint.states.values().all(|s| s.m.is_finite() && s.v.is_finite()) {
        checkpoint.save(&checkpoint_path)?;
    }
    Ok(TrainOutcome {
        metrics_path,
        checkpoint_path,
        final_train_loss: records.last().map(|r| r.train_loss),
        final_val_loss: final_val,
        checkpoint,
        records,
        diverged,
    })
}

pub const COMPARE_HEADER: &str = "step,run_id,val_loss,peak_mal,clip_fraction,bound_fraction";

/// Train every config on the same data stream and write one CSV row per
/// (evaluation step, run).
pub fn compare(cfgs: &[TrainConfig], csv_path: &Path) -> Result<Vec<TrainOutcome>> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one config".into()))?;
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        let same = c.model == first.model
            && c.data == first.data
            && c.seed == first.seed
            && c.batch_size_sequences == first.batch_size_sequences
            && c.grad_accum_steps == first.grad_accum_steps
            && c.schedule.total_steps == first.schedule.total_steps
            && c.eval_interval == first.eval_interval
            && c.eval_sequences == first.eval_sequences;
        if !same {
            return Err(Error::Config(format!(
                "config {} differs from the first in model, data, seed, batch or step budget",
                i + 1
            )));
        }
    }
    let mut labels: Vec<String> = cfgs.iter().map(TrainConfig::run_label).collect();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for l in &labels {
        *seen.entry(l.clone()).or_default() += 1;
    }
    for (i, l) in labels.iter_mut().enumerate() {
        if seen[l.as_str()] > 1 {
            *l = format!("{l}-{}", i + 1);
        }
    }

    let mut outcomes = Vec::with_capacity(cfgs.len());
    for (c, label) in cfgs.iter().zip(&labels) {
        let mut c = c.clone();
        c.run_id = Some(label.clone());
        outcomes.push(train(&c)?);
    }

    let mut rows: Vec<(u64, usize, String)> = Vec::new();
    for (run, (out, label)) in outcomes.iter().zip(&labels).enumerate() {
        for r in &out.records {
            let Some(v) = r.val_loss.or(r.diverged.then_some(f64::NAN)) else {
                continue;
            };
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            let num = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
            rows.push((
                r.step,
                run,
                format!(
                    "{},{label},{},{},{},{}",
                    r.step,
                    num(v),
                    num(r.peak_max_logit()),
                    opt(r.clip_fraction),
                    opt(r.bound_fraction)
                ),
            ));
        }
    }
    rows.sort_by_key(|(s, run, _)| (*s, *run));
    let mut text = String::from(COMPARE_HEADER);
    text.push('\n');
    for (_, _, line) in rows {
        text.push_str(&line);
        text.push('\n');
    }
    let mut f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(csv_path, e))?;
    Ok(outcomes)
}
