use crate::error::{Error, Result};
use crate::tensor::{l2_norm, matmul, max_norm, Tensor};

/// Upper bound `sqrt(d)·M_Q·M_K·C_X²` on every attention logit
/// `<Q_i, K_j>/sqrt(d)`, given `‖W_Q‖ₘ ≤ M_Q`, `‖W_K‖ₘ ≤ M_K`, every input
/// row having absolute sum at most `C_X`, and head dimension `d`.
pub fn logit_upper_bound(m_q: f64, m_k: f64, c_x: f64, d: usize) -> Result<f64> {
    for (v, name) in [(m_q, "M_Q"), (m_k, "M_K"), (c_x, "C_X")] {
        if v.is_nan() || v < 0.0 || !v.is_finite() {
            return Err(Error::Domain(format!(
                "{name} must be a finite non-negative number, got {v}"
            )));
        }
    }
    if d == 0 {
        return Err(Error::Domain("head dimension must be positive".into()));
    }
    Ok((d as f64).sqrt() * m_q * m_k * c_x * c_x)
}

/// All pairwise logits `(X W_Q)(X W_K)ᵀ / sqrt(d)` for a single head, where
/// `d` is the number of columns of `W_Q`.
pub fn attention_logits(x: &Tensor, w_q: &Tensor, w_k: &Tensor) -> Result<Tensor> {
    w_q.expect_same_shape(w_k)?;
    let (_, d) = w_q.matrix_dims()?;
    let q = matmul(x, w_q)?;
    let k = matmul(x, w_k)?;
    Ok(matmul(&q, &k.transpose()?)?.scale(1.0 / (d as f64).sqrt()))
}

/// Largest absolute row sum of `x`: the tightest admissible `C_X`.
pub fn max_row_abs_sum(x: &Tensor) -> Result<f64> {
    let (m, _) = x.matrix_dims()?;
    Ok((0..m)
        .map(|i| x.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// `(‖W‖₂ − ‖W‖ₘ) / ‖W‖₂`, in `[0, 1)`; zero exactly when `W` has a single
/// nonzero entry.
pub fn norm_gap_ratio(w: &Tensor) -> Result<f64> {
    let l2 = l2_norm(w.data())?;
    if l2 == 0.0 {
        return Err(Error::Domain("norm gap is undefined for an all-zero tensor".into()));
    }
    let mx = max_norm(w.data())?;
    Ok(((l2 - mx) / l2).max(0.0))
}

fn mean_abs_cosine(vectors: &[Vec<f64>], what: &str) -> Result<f64> {
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let live: Vec<usize> = (0..vectors.len()).filter(|&i| norms[i] > 0.0).collect();
    if live.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least two nonzero {what} for a similarity"
        )));
    }
    let mut sims = Vec::with_capacity(live.len() * (live.len() - 1) / 2);
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(x, y)| x.abs() * y.abs()).sum();
            sims.push(dot / (norms[i] * norms[j]));
        }
    }
    // Sorting first makes the mean independent of vector order.
    sims.sort_by(f64::total_cmp);
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Mean pairwise cosine similarity between the absolute-value rows of `w`,
/// and between its absolute-value columns. All-zero rows or columns are left
/// out of the mean.
pub fn rowcol_similarity(w: &Tensor) -> Result<(f64, f64)> {
    let (m, n) = w.matrix_dims()?;
    if m < 2 || n < 2 {
        return Err(Error::Dimension(format!(
            "similarity needs at least a 2x2 matrix, got {m}x{n}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..m).map(|i| w.row(i).to_vec()).collect();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| w.get2(i, j)).collect()).collect();
    Ok((mean_abs_cosine(&rows, "rows")?, mean_abs_cosine(&cols, "columns")?))
}
