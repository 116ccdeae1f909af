//! Per-tensor diagnostic tables and their CSV form.

use std::path::Path;

use super::bounds::{logit_upper_bound, max_row_abs_sum, norm_gap_ratio, rowcol_similarity};
use super::curvature::CurvatureReport;
use super::sweep::SweepRow;
use crate::error::{Error, Result};
use crate::nanoformer::{forward, LayerNames, ModelConfig, TokenBatch};
use crate::params::Params;
use crate::tensor::Tensor;

pub const NORM_GAP_HEADER: &str = "name,rows,cols,l2_norm,max_norm,norm_gap_ratio";
pub const SIMILARITY_HEADER: &str = "name,rows,cols,row_similarity,col_similarity";
pub const BOUND_HEADER: &str = "layer,head,m_q,m_k,c_x,bound,observed_max_logit";
pub const CURVATURE_HEADER: &str = "top_eigenvalue,trace_estimate,probes_used,power_iters,residual";
pub const SWEEP_HEADER: &str = "lr,layer,initial_mal,peak_mal,final_train_loss,diverged";

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn as_matrix(t: &Tensor) -> Option<Tensor> {
    if t.ndim() < 2 {
        return None;
    }
    let rows = t.shape()[0];
    Tensor::new(vec![rows, t.numel() / rows], t.data().to_vec()).ok()
}

/// Norm-gap ratio of every matrix parameter; all-zero matrices are skipped.
pub fn norm_gap_rows(params: &Params) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        let Some(m) = as_matrix(t) else { continue };
        let (r, c) = m.matrix_dims()?;
        let l2 = m.l2_norm()?;
        if l2 == 0.0 {
            continue;
        }
        out.push(format!("{name},{r},{c},{l2},{},{}", m.max_norm()?, norm_gap_ratio(&m)?));
    }
    Ok(out)
}

/// Row and column similarity of every matrix parameter with at least two
/// nonzero rows and columns.
pub fn similarity_rows(params: &Params) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        let Some(m) = as_matrix(t) else { continue };
        let (r, c) = m.matrix_dims()?;
        match rowcol_similarity(&m) {
            Ok((rs, cs)) => out.push(format!("{name},{r},{c},{rs},{cs}")),
            Err(Error::Domain(_)) | Err(Error::Dimension(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn head_columns(w: &Tensor, head: usize, hd: usize) -> Result<Tensor> {
    let (rows, _) = w.matrix_dims()?;
    let data = (0..rows)
        .flat_map(|i| w.row(i)[head * hd..(head + 1) * hd].to_vec())
        .collect();
    Tensor::new(vec![rows, hd], data)
}

/// For every layer and head: the logit bound from the current `W_Q`, `W_K`
/// max norms and the row absolute sums of the attention input on `tokens`,
/// next to the largest logit actually produced for that head.
pub fn bound_check_rows(cfg: &ModelConfig, params: &Params, tokens: &TokenBatch) -> Result<Vec<String>> {
    let out = forward(cfg, params, tokens)?;
    let (d, hd, t_len) = (cfg.d_model, cfg.head_dim(), tokens.seq_len());
    let mut rows = Vec::new();
    for l in 0..cfg.n_layer {
        let names = LayerNames::new(l);
        let x = Tensor::new(vec![tokens.batch() * t_len, d], out.cache.attention_input(l).to_vec())?;
        let c_x = max_row_abs_sum(&x)?;
        let (qs, ks) = out.cache.logit_operands(l);
        for h in 0..cfg.n_head {
            let m_q = head_columns(params.get(&names.wq)?, h, hd)?.max_norm()?;
            let m_k = head_columns(params.get(&names.wk)?, h, hd)?.max_norm()?;
            let bound = logit_upper_bound(m_q, m_k, c_x, hd)?;
            let mut observed = f64::NEG_INFINITY;
            for b in 0..tokens.batch() {
                for i in 0..t_len {
                    let qi = &qs[(b * t_len + i) * d + h * hd..][..hd];
                    for j in 0..=i {
                        let kj = &ks[(b * t_len + j) * d + h * hd..][..hd];
                        let z: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt();
                        observed = observed.max(z);
                    }
                }
            }
            rows.push(format!("{l},{h},{m_q},{m_k},{c_x},{bound},{observed}"));
        }
    }
    Ok(rows)
}

pub fn curvature_rows(rep: &CurvatureReport) -> Vec<String> {
    vec![format!(
        "{},{},{},{},{}",
        rep.top_eigenvalue, rep.trace_estimate, rep.probes_used, rep.power_iters, rep.residual
    )]
}

pub fn sweep_rows(rows: &[SweepRow]) -> Vec<String> {
    let mut out = Vec::new();
    for r in rows {
        let loss = r.final_train_loss.map(|l| l.to_string()).unwrap_or_default();
        for (layer, (init, peak)) in r.initial_mal.iter().zip(&r.peak_mal).enumerate() {
            out.push(format!("{},{layer},{init},{peak},{loss},{}", r.lr, r.diverged));
        }
    }
    out
}
