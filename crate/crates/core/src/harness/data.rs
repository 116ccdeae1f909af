use std::collections::HashMap;
use std::path::Path;

use super::config::{DataSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::nanoformer::TokenBatch;
use crate::rng::SeededRng;

const BATCH_STREAM: u64 = 0x6261_7463;
const SYNTH_TABLE: u64 = 0x7461_626c;
const SYNTH_STREAM: u64 = 0x7374_726d;

/// Token stream split into training and validation parts (last 5%).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Splits {
    pub fn from_tokens(mut tokens: Vec<u32>) -> Self {
        let n_val = (tokens.len() * 5).div_ceil(100);
        let val = tokens.split_off(tokens.len() - n_val);
        Self { train: tokens, val }
    }

    pub fn get(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }
}

/// Bytes of `path` as tokens `0..=255`, split 95/5.
pub fn load_corpus(path: &Path) -> Result<Splits> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, "corpus file is empty"),
        ));
    }
    Ok(Splits::from_tokens(bytes.into_iter().map(u32::from).collect()))
}

/// Generate a Markov stream per `spec`. Successor sets are drawn lazily from a
/// stream keyed on the context, so the table never has to be materialized.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<u32>> {
    if spec.length == 0 || spec.order == 0 || spec.branching == 0 || !(1..=256).contains(&spec.alphabet) {
        return Err(Error::Domain(format!(
            "synthetic corpus needs length, order, branching >= 1 and alphabet in 1..=256, got {spec:?}"
        )));
    }
    let a = spec.alphabet;
    let mut table: HashMap<Vec<u32>, Vec<u32>> = HashMap::new();
    let mut rng = SeededRng::derived(spec.seed, &[SYNTH_STREAM]);
    let mut out: Vec<u32> = Vec::with_capacity(spec.length);
    for _ in 0..spec.order.min(spec.length) {
        out.push(rng.below(a) as u32);
    }
    while out.len() < spec.length {
        let ctx = &out[out.len() - spec.order..];
        let succ = table.entry(ctx.to_vec()).or_insert_with(|| successors(spec, ctx));
        let next = succ[rng.below(succ.len())];
        out.push(next);
    }
    Ok(out)
}

fn successors(spec: &SynthSpec, ctx: &[u32]) -> Vec<u32> {
    let mut labels = vec![SYNTH_TABLE];
    labels.extend(ctx.iter().map(|&t| u64::from(t)));
    let mut rng = SeededRng::derived(spec.seed, &labels);
    let mut symbols: Vec<u32> = (0..spec.alphabet as u32).collect();
    let k = spec.branching.min(spec.alphabet);
    for i in 0..k {
        let j = i + rng.below(symbols.len() - i);
        symbols.swap(i, j);
    }
    symbols.truncate(k);
    symbols
}

pub fn load_data(spec: &DataSpec) -> Result<Splits> {
    match spec {
        DataSpec::Corpus(path) => load_corpus(path),
        DataSpec::Synthetic(s) => Ok(Splits::from_tokens(synth_corpus(s)?)),
    }
}

fn check_len(split: &[u32], context_len: usize) -> Result<()> {
    if split.len() < context_len + 1 {
        return Err(Error::Domain(format!(
            "split has {} tokens, need at least context_len + 1 = {}",
            split.len(),
            context_len + 1
        )));
    }
    Ok(())
}

/// Random windows for training step `step`, micro-batch `micro`. The draw is
/// a pure function of `(seed, step, micro)`.
pub fn next_batch(
    split: &[u32],
    seed: u64,
    step: u64,
    micro: u64,
    batch: usize,
    context_len: usize,
) -> Result<(TokenBatch, TokenBatch)> {
    check_len(split, context_len)?;
    let mut rng = SeededRng::derived(seed, &[BATCH_STREAM, step, micro]);
    let starts: Vec<usize> = (0..batch).map(|_| rng.below(split.len() - context_len)).collect();
    windows(split, &starts, context_len)
}

fn windows(split: &[u32], starts: &[usize], context_len: usize) -> Result<(TokenBatch, TokenBatch)> {
    let mut x = Vec::with_capacity(starts.len() * context_len);
    let mut y = Vec::with_capacity(starts.len() * context_len);
    for &s in starts {
        x.extend_from_slice(&split[s..s + context_len]);
        y.extend_from_slice(&split[s + 1..s + context_len + 1]);
    }
    Ok((
        TokenBatch::new(starts.len(), context_len, x)?,
        TokenBatch::new(starts.len(), context_len, y)?,
    ))
}

/// Fixed evaluation set: up to `max_sequences` non-overlapping windows from the
/// start of the split, grouped into batches of at most `batch`.
pub fn eval_batches(
    split: &[u32],
    max_sequences: usize,
    batch: usize,
    context_len: usize,
) -> Result<Vec<(TokenBatch, TokenBatch)>> {
    check_len(split, context_len)?;
    let n = ((split.len() - 1) / context_len).min(max_sequences).max(1);
    let starts: Vec<usize> = (0..n).map(|i| i * context_len).collect();
    starts
        .chunks(batch.max(1))
        .map(|c| windows(split, c, context_len))
        .collect()
}
