use super::{AttentionProbe, LayerNames, ModelConfig, TokenBatch, LN_EPS, QK_NORM_EPS};
use crate::error::{Error, Result};
use crate::params::{Coordinate, Params};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    seq: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    xhat_f: Vec<f64>,
    rstd_f: Vec<f64>,
    a_f: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    qk: Option<QkNormCache>,
    /// `[batch, head, T, T]`; masked entries are 0.
    att: Vec<f64>,
    o: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

#[derive(Debug, Clone)]
struct QkNormCache {
    qn: Vec<f64>,
    kn: Vec<f64>,
    /// `[N, head]`
    q_rstd: Vec<f64>,
    k_rstd: Vec<f64>,
}

impl ForwardCache {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Post-softmax attention of `layer`, laid out `[batch, head, T, T]`
    /// with zeros above the diagonal.
    pub fn attention(&self, layer: usize) -> &[f64] {
        &self.layers[layer].att
    }

    /// Input to the attention projections (layer-normalized residual),
    /// `[batch·T, d_model]`.
    pub fn attention_input(&self, layer: usize) -> &[f64] {
        &self.layers[layer].a1
    }

    /// Queries and keys as they enter the dot product (normalized when QK-Norm
    /// is on), each `[batch·T, d_model]`.
    pub fn logit_operands(&self, layer: usize) -> (&[f64], &[f64]) {
        let l = &self.layers[layer];
        match &l.qk {
            Some(c) => (&c.qn, &c.kn),
            None => (&l.q, &l.k),
        }
    }
}

pub struct ForwardOutput {
    /// `[batch, T, vocab]`
    pub logits: Tensor,
    pub cache: ForwardCache,
    pub probes: Vec<AttentionProbe>,
}

pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Params,
    pub probes: Vec<AttentionProbe>,
}

fn check_tokens(cfg: &ModelConfig, tokens: &TokenBatch) -> Result<()> {
    if tokens.seq_len() > cfg.context_len {
        return Err(Error::Input(format!(
            "sequence length {} exceeds context length {}",
            tokens.seq_len(),
            cfg.context_len
        )));
    }
    if let Some(&bad) = tokens.ids().iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} out of range for vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Gain-only layer norm over rows of width `d`.
fn layer_norm(x: &[f64], g: &[f64], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xr[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * g[c];
        }
    }
    (xhat, rstd, y)
}

/// Backward of [`layer_norm`]: accumulates into `dx` and `dg`.
fn layer_norm_backward(dy: &[f64], xhat: &[f64], rstd: &[f64], g: &[f64], d: usize, dx: &mut [f64], dg: &mut [f64]) {
    let rows = dy.len() / d;
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dg[c] += dyr[c] * xr[c];
            dxhat[c] = dyr[c] * g[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xr[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for c in 0..d {
            dx[r * d + c] += rstd[r] * (dxhat[c] - mean_dxhat - xr[c] * mean_dxhat_xhat);
        }
    }
}

/// Normalize each head segment of each row to zero mean, unit variance.
fn head_norm(x: &[f64], n_head: usize, hd: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / (n_head * hd);
    let mut out = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows * n_head];
    for r in 0..rows {
        for h in 0..n_head {
            let off = r * n_head * hd + h * hd;
            let seg = &x[off..off + hd];
            let mean = seg.iter().sum::<f64>() / hd as f64;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / hd as f64;
            let rs = 1.0 / (var + QK_NORM_EPS).sqrt();
            rstd[r * n_head + h] = rs;
            for c in 0..hd {
                out[off + c] = (seg[c] - mean) * rs;
            }
        }
    }
    (out, rstd)
}

fn head_norm_backward(dy: &[f64], y: &[f64], rstd: &[f64], n_head: usize, hd: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let rows = dy.len() / (n_head * hd);
    for r in 0..rows {
        for h in 0..n_head {
            let off = r * n_head * hd + h * hd;
            let dys = &dy[off..off + hd];
            let ys = &y[off..off + hd];
            let mean_dy = dys.iter().sum::<f64>() / hd as f64;
            let mean_dy_y = dys.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / hd as f64;
            let rs = rstd[r * n_head + h];
            for c in 0..hd {
                dx[off + c] = rs * (dys[c] - mean_dy - ys[c] * mean_dy_y);
            }
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn param<'a>(params: &'a Params, name: &str) -> Result<&'a [f64]> {
    Ok(params.get(name)?.data())
}

/// Run the model on `tokens`, returning logits, the activation cache and
/// per-layer attention probes.
pub fn forward(cfg: &ModelConfig, params: &Params, tokens: &TokenBatch) -> Result<ForwardOutput> {
    cfg.validate()?;
    cfg.check_params(params)?;
    check_tokens(cfg, tokens)?;

    let (bsz, t_len) = (tokens.batch(), tokens.seq_len());
    let d = cfg.d_model;
    let n_head = cfg.n_head;
    let hd = cfg.head_dim();
    let f = 4 * d;
    let n = bsz * t_len;
    let vocab = cfg.vocab_size;
    let scale = 1.0 / (hd as f64).sqrt();

    let wte = param(params, "wte")?;
    let wpe = param(params, "wpe")?;
    let mut x = vec![0.0; n * d];
    for (row, &tok) in tokens.ids().iter().enumerate() {
        let t = row % t_len;
        let e = &wte[tok as usize * d..(tok as usize + 1) * d];
        let p = &wpe[t * d..(t + 1) * d];
        for c in 0..d {
            x[row * d + c] = e[c] + p[c];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layer);
    let mut probes = Vec::with_capacity(cfg.n_layer);
    for l in 0..cfg.n_layer {
        let names = LayerNames::new(l);
        let (xhat1, rstd1, a1) = layer_norm(&x, param(params, &names.ln1)?, d);

        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        gemm_nn(&a1, param(params, &names.wq)?, &mut q, n, d, d);
        gemm_nn(&a1, param(params, &names.wk)?, &mut k, n, d, d);
        gemm_nn(&a1, param(params, &names.wv)?, &mut v, n, d, d);

        let qk = if cfg.qk_norm {
            let (qn, q_rstd) = head_norm(&q, n_head, hd);
            let (kn, k_rstd) = head_norm(&k, n_head, hd);
            Some(QkNormCache { qn, kn, q_rstd, k_rstd })
        } else {
            None
        };
        let (qs, ks) = match &qk {
            Some(c) => (&c.qn, &c.kn),
            None => (&q, &k),
        };

        let mut att = vec![0.0; bsz * n_head * t_len * t_len];
        let mut o = vec![0.0; n * d];
        let mut max_logit = f64::NEG_INFINITY;
        let mut entropy_sum = 0.0;
        for b in 0..bsz {
            for h in 0..n_head {
                for i in 0..t_len {
                    let base = ((b * n_head + h) * t_len + i) * t_len;
                    let qi = &qs[(b * t_len + i) * d + h * hd..][..hd];
                    let row = &mut att[base..base + i + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &ks[(b * t_len + j) * d + h * hd..][..hd];
                        let mut acc = 0.0;
                        for c in 0..hd {
                            acc += qi[c] * kj[c];
                        }
                        *s = acc * scale;
                        max_logit = max_logit.max(*s);
                    }
                    crate::tensor::softmax_in_place(row);
                    entropy_sum -= row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
                    let oi = &mut o[(b * t_len + i) * d + h * hd..][..hd];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v[(b * t_len + j) * d + h * hd..][..hd];
                        for c in 0..hd {
                            oi[c] += p * vj[c];
                        }
                    }
                }
            }
        }
        probes.push(AttentionProbe {
            layer_index: l,
            max_logit,
            attention_entropy: entropy_sum / (bsz * n_head * t_len) as f64,
        });

        gemm_nn(&o, param(params, &names.wo)?, &mut x, n, d, d);

        let (xhat2, rstd2, a2) = layer_norm(&x, param(params, &names.ln2)?, d);
        let mut hpre = vec![0.0; n * f];
        gemm_nn(&a2, param(params, &names.fc)?, &mut hpre, n, d, f);
        let hact: Vec<f64> = hpre.iter().map(|&z| gelu(z)).collect();
        gemm_nn(&hact, param(params, &names.proj)?, &mut x, n, f, d);

        layers.push(LayerCache {
            xhat1,
            rstd1,
            a1,
            q,
            k,
            v,
            qk,
            att,
            o,
            xhat2,
            rstd2,
            a2,
            hpre,
            hact,
        });
    }

    let (xhat_f, rstd_f, a_f) = layer_norm(&x, param(params, "lnf.g")?, d);
    let mut logits = vec![0.0; n * vocab];
    gemm_nt(&a_f, wte, &mut logits, n, d, vocab);

    Ok(ForwardOutput {
        logits: Tensor::from_parts_unchecked(vec![bsz, t_len, vocab], logits),
        cache: ForwardCache {
            batch: bsz,
            seq: t_len,
            tokens: tokens.ids().to_vec(),
            layers,
            xhat_f,
            rstd_f,
            a_f,
        },
        probes,
    })
}

fn check_targets(cfg: &ModelConfig, tokens: &TokenBatch, targets: &TokenBatch) -> Result<()> {
    if tokens.batch() != targets.batch() || tokens.seq_len() != targets.seq_len() {
        return Err(Error::Input("tokens and targets differ in shape".into()));
    }
    if let Some(&bad) = targets.ids().iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!("target id {bad} out of range")));
    }
    Ok(())
}

/// Row-wise log-softmax cross-entropy; turns `logits` into probabilities in
/// place and returns the mean loss.
fn cross_entropy(logits: &mut [f64], targets: &[u32], vocab: usize) -> f64 {
    let mut total = 0.0;
    for (r, &tgt) in targets.iter().enumerate() {
        let row = &mut logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &z| a.max(z));
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[tgt as usize];
        for z in row.iter_mut() {
            *z = (*z - lse).exp();
        }
    }
    total / targets.len() as f64
}

/// Mean next-token cross-entropy in nats.
pub fn loss(cfg: &ModelConfig, params: &Params, tokens: &TokenBatch, targets: &TokenBatch) -> Result<f64> {
    check_targets(cfg, tokens, targets)?;
    let out = forward(cfg, params, tokens)?;
    let mut logits = out.logits.into_data();
    Ok(cross_entropy(&mut logits, targets.ids(), cfg.vocab_size))
}

/// Loss plus exact gradients for every parameter.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &Params,
    tokens: &TokenBatch,
    targets: &TokenBatch,
) -> Result<LossAndGrads> {
    check_targets(cfg, tokens, targets)?;
    let ForwardOutput { logits, cache, probes } = forward(cfg, params, tokens)?;
    let vocab = cfg.vocab_size;
    let mut probs = logits.into_data();
    let loss = cross_entropy(&mut probs, targets.ids(), vocab);
    let grads = backward(cfg, params, &cache, probs, targets)?;
    Ok(LossAndGrads { loss, grads, probes })
}

fn backward(
    cfg: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    probs: Vec<f64>,
    targets: &TokenBatch,
) -> Result<Params> {
    let (bsz, t_len) = (cache.batch, cache.seq);
    let d = cfg.d_model;
    let n_head = cfg.n_head;
    let hd = cfg.head_dim();
    let f = 4 * d;
    let n = bsz * t_len;
    let vocab = cfg.vocab_size;
    let scale = 1.0 / (hd as f64).sqrt();
    let inv_n = 1.0 / n as f64;

    let mut grads = params.zeros_like();
    let mut take = |name: &str| -> Result<Vec<f64>> { Ok(grads.get_mut(name)?.data().to_vec()) };
    let mut dwte = take("wte")?;
    let mut dwpe = take("wpe")?;
    let mut dlnf = take("lnf.g")?;

    let mut dlogits = probs;
    for (r, &tgt) in targets.ids().iter().enumerate() {
        dlogits[r * vocab + tgt as usize] -= 1.0;
    }
    for z in dlogits.iter_mut() {
        *z *= inv_n;
    }

    let wte = param(params, "wte")?;
    let mut da_f = vec![0.0; n * d];
    gemm_nn(&dlogits, wte, &mut da_f, n, vocab, d);
    gemm_tn(&dlogits, &cache.a_f, &mut dwte, vocab, n, d);
    drop(dlogits);

    let mut dx = vec![0.0; n * d];
    layer_norm_backward(
        &da_f,
        &cache.xhat_f,
        &cache.rstd_f,
        param(params, "lnf.g")?,
        d,
        &mut dx,
        &mut dlnf,
    );

    let mut layer_grads: Vec<(LayerNames, [Vec<f64>; 8])> = Vec::with_capacity(cfg.n_layer);
    for l in (0..cfg.n_layer).rev() {
        let names = LayerNames::new(l);
        let lc = &cache.layers[l];
        let mut g_ln1 = vec![0.0; d];
        let mut g_wq = vec![0.0; d * d];
        let mut g_wk = vec![0.0; d * d];
        let mut g_wv = vec![0.0; d * d];
        let mut g_wo = vec![0.0; d * d];
        let mut g_ln2 = vec![0.0; d];
        let mut g_fc = vec![0.0; d * f];
        let mut g_proj = vec![0.0; f * d];

        // MLP
        gemm_tn(&lc.hact, &dx, &mut g_proj, f, n, d);
        let mut dh = vec![0.0; n * f];
        gemm_nt(&dx, param(params, &names.proj)?, &mut dh, n, d, f);
        for (g, &z) in dh.iter_mut().zip(&lc.hpre) {
            *g *= gelu_grad(z);
        }
        gemm_tn(&lc.a2, &dh, &mut g_fc, d, n, f);
        let mut da2 = vec![0.0; n * d];
        gemm_nt(&dh, param(params, &names.fc)?, &mut da2, n, f, d);
        drop(dh);
        layer_norm_backward(
            &da2,
            &lc.xhat2,
            &lc.rstd2,
            param(params, &names.ln2)?,
            d,
            &mut dx,
            &mut g_ln2,
        );

        // attention output projection
        gemm_tn(&lc.o, &dx, &mut g_wo, d, n, d);
        let mut d_o = vec![0.0; n * d];
        gemm_nt(&dx, param(params, &names.wo)?, &mut d_o, n, d, d);

        let (qs, ks) = match &lc.qk {
            Some(c) => (&c.qn, &c.kn),
            None => (&lc.q, &lc.k),
        };
        let mut dqs = vec![0.0; n * d];
        let mut dks = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; t_len];
        for b in 0..bsz {
            for h in 0..n_head {
                for i in 0..t_len {
                    let base = ((b * n_head + h) * t_len + i) * t_len;
                    let p = &lc.att[base..base + i + 1];
                    let doi = &d_o[(b * t_len + i) * d + h * hd..][..hd];
                    let mut dot_pdp = 0.0;
                    for j in 0..=i {
                        let voff = (b * t_len + j) * d + h * hd;
                        let vj = &lc.v[voff..voff + hd];
                        let mut acc = 0.0;
                        for c in 0..hd {
                            acc += doi[c] * vj[c];
                        }
                        dp[j] = acc;
                        dot_pdp += p[j] * acc;
                        let dvj = &mut dv[voff..voff + hd];
                        for c in 0..hd {
                            dvj[c] += p[j] * doi[c];
                        }
                    }
                    let qoff = (b * t_len + i) * d + h * hd;
                    for j in 0..=i {
                        let ds = p[j] * (dp[j] - dot_pdp) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let koff = (b * t_len + j) * d + h * hd;
                        for c in 0..hd {
                            dqs[qoff + c] += ds * ks[koff + c];
                            dks[koff + c] += ds * qs[qoff + c];
                        }
                    }
                }
            }
        }
        drop(d_o);
        let (dq, dk) = match &lc.qk {
            Some(c) => (
                head_norm_backward(&dqs, &c.qn, &c.q_rstd, n_head, hd),
                head_norm_backward(&dks, &c.kn, &c.k_rstd, n_head, hd),
            ),
            None => (dqs, dks),
        };

        gemm_tn(&lc.a1, &dq, &mut g_wq, d, n, d);
        gemm_tn(&lc.a1, &dk, &mut g_wk, d, n, d);
        gemm_tn(&lc.a1, &dv, &mut g_wv, d, n, d);
        let mut da1 = vec![0.0; n * d];
        gemm_nt(&dq, param(params, &names.wq)?, &mut da1, n, d, d);
        gemm_nt(&dk, param(params, &names.wk)?, &mut da1, n, d, d);
        gemm_nt(&dv, param(params, &names.wv)?, &mut da1, n, d, d);
        layer_norm_backward(
            &da1,
            &lc.xhat1,
            &lc.rstd1,
            param(params, &names.ln1)?,
            d,
            &mut dx,
            &mut g_ln1,
        );

        layer_grads.push((names, [g_ln1, g_wq, g_wk, g_wv, g_wo, g_ln2, g_fc, g_proj]));
    }

    for (row, &tok) in cache.tokens.iter().enumerate() {
        let t = row % t_len;
        let src = &dx[row * d..(row + 1) * d];
        let e = &mut dwte[tok as usize * d..(tok as usize + 1) * d];
        for c in 0..d {
            e[c] += src[c];
        }
        let p = &mut dwpe[t * d..(t + 1) * d];
        for c in 0..d {
            p[c] += src[c];
        }
    }

    let mut put = |name: &str, data: Vec<f64>| -> Result<()> {
        let slot = grads.get_mut(name)?;
        slot.data_mut().copy_from_slice(&data);
        Ok(())
    };
    put("wte", dwte)?;
    put("wpe", dwpe)?;
    put("lnf.g", dlnf)?;
    for (names, [g_ln1, g_wq, g_wk, g_wv, g_wo, g_ln2, g_fc, g_proj]) in layer_grads {
        put(&names.ln1, g_ln1)?;
        put(&names.wq, g_wq)?;
        put(&names.wk, g_wk)?;
        put(&names.wv, g_wv)?;
        put(&names.wo, g_wo)?;
        put(&names.ln2, g_ln2)?;
        put(&names.fc, g_fc)?;
        put(&names.proj, g_proj)?;
    }
    Ok(grads)
}

/// Central difference `(f(w + eps·e) − f(w − eps·e)) / (2·eps)` along one
/// coordinate. Negating `eps` gives the same value.
pub fn finite_diff_grad<F>(f: F, params: &Params, coord: &Coordinate, eps: f64) -> Result<f64>
where
    F: Fn(&Params) -> Result<f64>,
{
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::Domain(format!(
            "finite-difference step must be nonzero, got {eps}"
        )));
    }
    let w0 = params.coordinate(coord)?;
    let mut p = params.clone();
    p.set_coordinate(coord, w0 + eps)?;
    let up = f(&p)?;
    p.set_coordinate(coord, w0 - eps)?;
    let down = f(&p)?;
    Ok((up - down) / (2.0 * eps))
}

/// Richardson extrapolation of two central differences,
/// `(4·D(h) − D(2h)) / 3`. Truncation error is O(h⁴), so a larger `h` keeps
/// roundoff small when the gradient itself is tiny.
pub fn richardson_diff_grad<F>(f: F, params: &Params, coord: &Coordinate, h: f64) -> Result<f64>
where
    F: Fn(&Params) -> Result<f64>,
{
    let near = finite_diff_grad(&f, params, coord, h)?;
    let far = finite_diff_grad(&f, params, coord, 2.0 * h)?;
    Ok((4.0 * near - far) / 3.0)
}
