use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use merit_core::diagnostics::report::{
    bound_check_rows, curvature_rows, norm_gap_rows, similarity_rows, sweep_rows, write_csv, BOUND_HEADER,
    CURVATURE_HEADER, NORM_GAP_HEADER, SIMILARITY_HEADER, SWEEP_HEADER,
};
use merit_core::diagnostics::{lr_logit_sweep, top_eigenvalue, CurvatureOptions, ModelOracle, QuadraticFixture};
use merit_core::harness::{self, load_data, next_batch, Checkpoint, Session, Split, TrainConfig};
use merit_core::nanoformer::{loss, loss_and_grads, richardson_diff_grad, TokenBatch};
use merit_core::optim::OptimizerKind;
use merit_core::{Coordinate, SeededRng};

use crate::Status;

/// Gradient check passes when every sampled coordinate is within this
/// relative error of its central difference.
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-3;
/// Sequences used per gradient check; keeps finite differences cheap.
const GRADCHECK_SEQUENCES: usize = 8;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

pub fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<Status> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let outcome = harness::train(&cfg)?;
    println!(
        "{}: final train loss {}, final val loss {}, metrics {}",
        cfg.run_label(),
        fmt_opt(outcome.final_train_loss),
        fmt_opt(outcome.final_val_loss),
        outcome.metrics_path.display()
    );
    if outcome.diverged {
        eprintln!("run diverged at step {}", outcome.records.last().map_or(0, |r| r.step));
        return Ok(Status::Diverged);
    }
    Ok(Status::Ok)
}

pub fn compare(configs: &[PathBuf], out: &Path) -> anyhow::Result<Status> {
    let cfgs = configs
        .iter()
        .map(|p| TrainConfig::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = harness::compare(&cfgs, out)?;
    let mut diverged = false;
    for (cfg, o) in cfgs.iter().zip(&outcomes) {
        println!("{}: final val loss {}", cfg.run_label(), fmt_opt(o.final_val_loss));
        diverged |= o.diverged;
    }
    println!("wrote {}", out.display());
    Ok(if diverged { Status::Diverged } else { Status::Ok })
}

pub fn evaluate(ckpt: &Path, config: &Path, split: Split) -> anyhow::Result<Status> {
    let ckpt = Checkpoint::load(ckpt)?;
    let cfg = TrainConfig::load(config)?;
    let loss = harness::evaluate(&ckpt, &cfg, split)?;
    println!("{split:?} loss {loss:.6} at step {}", ckpt.step);
    Ok(Status::Ok)
}

pub fn gradcheck(config: &Path, coords: usize, seed: u64, corrupt: bool) -> anyhow::Result<Status> {
    let cfg = TrainConfig::load(config)?;
    let session = Session::new(&cfg)?;
    let (x, y) = session
        .micro_batches(0)?
        .into_iter()
        .next()
        .context("config yields no micro-batches")?;
    let keep = x.batch().min(GRADCHECK_SEQUENCES);
    let take = |b: &TokenBatch| TokenBatch::from_rows(&(0..keep).map(|i| b.row(i).to_vec()).collect::<Vec<_>>());
    let (x, y) = (take(&x)?, take(&y)?);

    let params = session.params();
    let mut grads = loss_and_grads(&cfg.model, params, &x, &y)?.grads;
    if corrupt {
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * 1.01 + 1e-3;
            }
        }
    }
    let names: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    let mut rng = SeededRng::new(seed);
    let f = |p: &merit_core::Params| loss(&cfg.model, p, &x, &y);
    let mut worst = (0.0f64, String::new());
    for k in 0..coords {
        // Cycle through tensors so every parameter group is sampled.
        let (name, numel) = &names[k % names.len()];
        let coord = Coordinate {
            name: name.clone(),
            index: rng.below(*numel),
        };
        let fd = richardson_diff_grad(f, params, &coord, GRADCHECK_STEP)?;
        let an = grads.coordinate(&coord)?;
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
        log::debug!(
            "{}[{}]: analytic {an:e}, numeric {fd:e}, rel {rel:e}",
            coord.name,
            coord.index
        );
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, format!("{}[{}]", coord.name, coord.index));
        }
    }
    println!(
        "checked {coords} coordinates: max relative error {:.3e} at {}",
        worst.0, worst.1
    );
    if worst.0 <= GRADCHECK_TOL {
        Ok(Status::Ok)
    } else {
        eprintln!("gradient check failed: tolerance {GRADCHECK_TOL:e}");
        Ok(Status::CheckFailed)
    }
}

pub struct DiagnoseOpts<'a> {
    pub probes: usize,
    pub iters: usize,
    pub out: &'a Path,
}

impl DiagnoseOpts<'_> {
    fn curvature(&self) -> CurvatureOptions {
        CurvatureOptions {
            iters: self.iters,
            probes: self.probes,
            ..CurvatureOptions::default()
        }
    }
}

/// Min, mean and max of one numeric CSV column.
fn column_summary(rows: &[String], col: usize) -> Option<(f64, f64, f64)> {
    let vals: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.split(',').nth(col)?.parse().ok())
        .collect();
    if vals.is_empty() {
        return None;
    }
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((min, vals.iter().sum::<f64>() / vals.len() as f64, max))
}

fn write_rows(opts: &DiagnoseOpts, header: &str, rows: &[String]) -> anyhow::Result<()> {
    write_csv(opts.out, header, rows)?;
    println!("wrote {} rows to {}", rows.len(), opts.out.display());
    Ok(())
}

pub fn norm_gap(ckpt: &Path, opts: &DiagnoseOpts) -> anyhow::Result<Status> {
    let ckpt = Checkpoint::load(ckpt)?;
    let rows = norm_gap_rows(&ckpt.params)?;
    if let Some((min, mean, max)) = column_summary(&rows, 5) {
        println!(
            "norm gap ratio over {} matrices: min {min:.4}, mean {mean:.4}, max {max:.4}",
            rows.len()
        );
    }
    write_rows(opts, NORM_GAP_HEADER, &rows)?;
    Ok(Status::Ok)
}

pub fn similarity(ckpt: &Path, opts: &DiagnoseOpts) -> anyhow::Result<Status> {
    let ckpt = Checkpoint::load(ckpt)?;
    let rows = similarity_rows(&ckpt.params)?;
    if let (Some((_, row, _)), Some((_, col, _))) = (column_summary(&rows, 3), column_summary(&rows, 4)) {
        println!("mean row similarity {row:.4}, mean column similarity {col:.4}");
    }
    write_rows(opts, SIMILARITY_HEADER, &rows)?;
    Ok(Status::Ok)
}

/// Checkpoint plus one training batch drawn from the config's data.
fn checkpoint_and_batch(
    ckpt: &Path,
    config: Option<&Path>,
) -> anyhow::Result<(Checkpoint, TrainConfig, TokenBatch, TokenBatch)> {
    let config = config.context("this diagnostic needs --config for its data batch")?;
    let ckpt = Checkpoint::load(ckpt)?;
    let cfg = TrainConfig::load(config)?;
    if cfg.model != ckpt.model {
        bail!("checkpoint model differs from the model in {}", config.display());
    }
    let data = load_data(&cfg.data)?;
    let (x, y) = next_batch(
        &data.train,
        cfg.seed,
        0,
        0,
        cfg.batch_size_sequences,
        cfg.model.context_len,
    )?;
    Ok((ckpt, cfg, x, y))
}

pub fn curvature(ckpt: &Path, config: Option<&Path>, opts: &DiagnoseOpts) -> anyhow::Result<Status> {
    let (ckpt, cfg, x, y) = checkpoint_and_batch(ckpt, config)?;
    let oracle = ModelOracle {
        cfg: &cfg.model,
        tokens: &x,
        targets: &y,
    };
    let rep = top_eigenvalue(&oracle, &ckpt.params, &opts.curvature())?;
    print_curvature(&rep);
    write_rows(opts, CURVATURE_HEADER, &curvature_rows(&rep))?;
    Ok(Status::Ok)
}

/// `½·wᵀ diag(1..10) w` at `w = 1`: top eigenvalue 10, trace 55.
pub fn curvature_fixture(opts: &DiagnoseOpts) -> anyhow::Result<Status> {
    let diag: Vec<f64> = (1..=10).map(f64::from).collect();
    let f = QuadraticFixture::diagonal(&diag)?;
    let w = f.params(vec![1.0; diag.len()])?;
    let rep = top_eigenvalue(&f, &w, &opts.curvature())?;
    print_curvature(&rep);
    write_rows(opts, CURVATURE_HEADER, &curvature_rows(&rep))?;
    Ok(Status::Ok)
}

fn print_curvature(rep: &merit_core::diagnostics::CurvatureReport) {
    println!(
        "top eigenvalue {:.6} after {} iterations (residual {:.2e}), trace estimate {:.4} from {} probes",
        rep.top_eigenvalue, rep.power_iters, rep.residual, rep.trace_estimate, rep.probes_used
    );
}

pub fn bound_check(ckpt: &Path, config: Option<&Path>, opts: &DiagnoseOpts) -> anyhow::Result<Status> {
    let (ckpt, cfg, x, _) = checkpoint_and_batch(ckpt, config)?;
    let rows = bound_check_rows(&cfg.model, &ckpt.params, &x)?;
    let violations = rows
        .iter()
        .filter(|r| {
            let f: Vec<f64> = r.split(',').filter_map(|v| v.parse().ok()).collect();
            f.len() == 7 && f[6] > f[5]
        })
        .count();
    println!("{} heads checked, {violations} bound violations", rows.len());
    write_rows(opts, BOUND_HEADER, &rows)?;
    Ok(Status::Ok)
}

pub fn lr_sweep(config: &Path, lrs: &[f64], steps: u64, optimizer: Option<&str>, out: &Path) -> anyhow::Result<Status> {
    let cfg = TrainConfig::load(config)?;
    let kind: OptimizerKind = match optimizer {
        Some(s) => s.parse()?,
        None => cfg.optimizer,
    };
    let rows = lr_logit_sweep(&cfg, kind, lrs, steps)?;
    for r in &rows {
        let peak = r.peak_mal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "lr {:e}: peak max attention logit {peak:.4}, final train loss {}{}",
            r.lr,
            fmt_opt(r.final_train_loss),
            if r.diverged { " (diverged)" } else { "" }
        );
    }
    write_csv(out, SWEEP_HEADER, &sweep_rows(&rows))?;
    println!("wrote {}", out.display());
    Ok(Status::Ok)
}
