//! Tidy CSVs from metrics files: one row per (run, step, series).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use merit_core::harness::{read_metrics, MetricsRecord};

use crate::Status;

pub const LOSS_FILE: &str = "loss.csv";
pub const MAL_FILE: &str = "max_attention_logit.csv";
pub const CLIP_FILE: &str = "clip_ratio.csv";
pub const BOUND_FILE: &str = "bound_ratio.csv";

/// Run id for a metrics path: its directory name, made unique with a
/// numeric suffix when two inputs share one.
fn run_ids(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    paths
        .iter()
        .map(|p| {
            let base = p
                .parent()
                .and_then(Path::file_name)
                .or_else(|| p.file_stem())
                .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
            let mut id = base.clone();
            let mut k = 2;
            while !seen.insert(id.clone()) {
                id = format!("{base}-{k}");
                k += 1;
            }
            id
        })
        .collect()
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Aggregate value as layer `all`, then one row per layer.
fn push_fraction(out: &mut String, run: &str, r: &MetricsRecord, total: Option<f64>, per_layer: &Option<Vec<f64>>) {
    let Some(total) = total else { return };
    let _ = writeln!(out, "{run},{},all,{}", r.step, num(total));
    for (l, v) in per_layer.iter().flatten().enumerate() {
        let _ = writeln!(out, "{run},{},{l},{}", r.step, num(*v));
    }
}

pub fn export_plots(metrics: &[PathBuf], out: &Path) -> anyhow::Result<Status> {
    let ids = run_ids(metrics);
    let mut loss = String::from("run_id,step,lr,train_loss,val_loss\n");
    let mut mal = String::from("run_id,step,layer,max_logit\n");
    let mut clip = String::from("run_id,step,layer,clip_fraction\n");
    let mut bound = String::from("run_id,step,layer,bound_fraction\n");
    for (path, run) in metrics.iter().zip(&ids) {
        let records = read_metrics(path)?;
        for r in &records {
            let _ = writeln!(
                loss,
                "{run},{},{},{},{}",
                r.step,
                r.lr,
                num(r.train_loss),
                opt(r.val_loss)
            );
            for (l, v) in r.per_layer_max_logit.iter().enumerate() {
                let _ = writeln!(mal, "{run},{},{l},{}", r.step, num(*v));
            }
            push_fraction(&mut clip, run, r, r.clip_fraction, &r.per_layer_clip_fraction);
            push_fraction(&mut bound, run, r, r.bound_fraction, &r.per_layer_bound_fraction);
        }
        log::info!("{}: {} records as run {run}", path.display(), records.len());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, body) in [
        (LOSS_FILE, loss),
        (MAL_FILE, mal),
        (CLIP_FILE, clip),
        (BOUND_FILE, bound),
    ] {
        let p = out.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "wrote {LOSS_FILE}, {MAL_FILE}, {CLIP_FILE}, {BOUND_FILE} to {}",
        out.display()
    );
    Ok(Status::Ok)
}
