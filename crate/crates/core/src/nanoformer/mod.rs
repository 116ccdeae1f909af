//! A small byte-level decoder-only transformer with hand-written reverse-mode
//! gradients.
//!
//! Pre-LN blocks, causal multi-head attention, GELU MLP with 4× expansion,
//! learned absolute positions, gain-only layer norms, no biases, no dropout,
//! and an unembedding tied to the token embedding. Optional QK-Norm
//! normalizes each head's query and key rows (no learnable gain) before the
//! dot product.
//!
//! Every forward pass reports one [`AttentionProbe`] per layer: the largest
//! pre-softmax logit over the batch, all heads and the causally visible
//! positions, plus the mean entropy of the attention rows.

mod model;

pub use model::{
    finite_diff_grad, forward, loss, loss_and_grads, richardson_diff_grad, ForwardCache, ForwardOutput, LossAndGrads,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::rng::SeededRng;
use crate::tensor::{seeded_normal, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;
/// Kept tiny so normalized query/key rows have unit variance to ~1e-12.
pub const QK_NORM_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub context_len: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default)]
    pub qk_norm: bool,
}

fn default_vocab() -> usize {
    256
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.n_layer, "n_layer"),
            (self.n_head, "n_head"),
            (self.d_model, "d_model"),
            (self.context_len, "context_len"),
            (self.vocab_size, "vocab_size"),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_head ({})",
                self.d_model, self.n_head
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("wte".to_string(), vec![self.vocab_size, d]),
            ("wpe".to_string(), vec![self.context_len, d]),
        ];
        for l in 0..self.n_layer {
            let n = LayerNames::new(l);
            out.push((n.ln1, vec![d]));
            out.push((n.wq, vec![d, d]));
            out.push((n.wk, vec![d, d]));
            out.push((n.wv, vec![d, d]));
            out.push((n.wo, vec![d, d]));
            out.push((n.ln2, vec![d]));
            out.push((n.fc, vec![d, 4 * d]));
            out.push((n.proj, vec![4 * d, d]));
        }
        out.push(("lnf.g".to_string(), vec![d]));
        out
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in shapes {
            let t = params.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameter names for one transformer block.
#[derive(Debug, Clone)]
pub struct LayerNames {
    pub ln1: String,
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub ln2: String,
    pub fc: String,
    pub proj: String,
}

impl LayerNames {
    pub fn new(layer: usize) -> Self {
        let p = format!("h.{layer}");
        Self {
            ln1: format!("{p}.ln1.g"),
            wq: format!("{p}.attn.wq"),
            wk: format!("{p}.attn.wk"),
            wv: format!("{p}.attn.wv"),
            wo: format!("{p}.attn.wo"),
            ln2: format!("{p}.ln2.g"),
            fc: format!("{p}.mlp.fc"),
            proj: format!("{p}.mlp.proj"),
        }
    }
}

/// Block index encoded in a parameter name (`h.3.attn.wq` → 3).
pub fn layer_of(name: &str) -> Option<usize> {
    name.strip_prefix("h.")?.split('.').next()?.parse().ok()
}

/// Normal(0, 0.02) weights with residual output projections scaled by
/// `1/sqrt(2·n_layer)`; layer-norm gains start at 1.
pub fn init_params(cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Params> {
    cfg.validate()?;
    let resid_std = INIT_STD / (2.0 * cfg.n_layer as f64).sqrt();
    let mut params = Params::new();
    for (name, shape) in cfg.param_shapes() {
        let t = if shape.len() == 1 {
            Tensor::filled(&shape, 1.0)
        } else if name.ends_with(".attn.wo") || name.ends_with(".mlp.proj") {
            seeded_normal(&shape, 0.0, resid_std, rng)?
        } else {
            seeded_normal(&shape, 0.0, INIT_STD, rng)?
        };
        params.insert(name, t);
    }
    Ok(params)
}

/// Token ids laid out `[batch × seq_len]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    batch: usize,
    seq_len: usize,
    ids: Vec<u32>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq_len: usize, ids: Vec<u32>) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(Error::Input("token batch must be non-empty".into()));
        }
        if ids.len() != batch * seq_len {
            return Err(Error::Input(format!(
                "expected {} token ids for a {batch}x{seq_len} batch, got {}",
                batch * seq_len,
                ids.len()
            )));
        }
        Ok(Self { batch, seq_len, ids })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let seq_len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != seq_len) {
            return Err(Error::Input("ragged token rows".into()));
        }
        Self::new(rows.len(), seq_len, rows.concat())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Stack batches with equal sequence length.
    pub fn concat(parts: &[TokenBatch]) -> Result<Self> {
        let seq_len = parts.first().map_or(0, |p| p.seq_len);
        if parts.iter().any(|p| p.seq_len != seq_len) {
            return Err(Error::Input("cannot stack batches of different lengths".into()));
        }
        let ids = parts.iter().flat_map(|p| p.ids.iter().copied()).collect();
        Self::new(parts.iter().map(|p| p.batch).sum(), seq_len, ids)
    }
}

/// Attention statistics for one layer of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProbe {
    pub layer_index: usize,
    /// Max pre-softmax logit over batch, heads and unmasked positions.
    pub max_logit: f64,
    /// Mean Shannon entropy (nats) of the attention rows.
    pub attention_entropy: f64,
}
