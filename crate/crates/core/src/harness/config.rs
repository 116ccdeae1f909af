use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nanoformer::ModelConfig;
use crate::optim::{HyperParams, OptimizerKind, Schedule};

/// Storage precision for parameters and optimizer state. Arithmetic always
/// runs in 64-bit; in `f32` mode every stored value is rounded to 32-bit
/// after each step and checkpoints hold 4-byte elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn width(self) -> u8 {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }

    pub fn from_width(w: u8) -> Option<Self> {
        match w {
            8 => Some(Precision::F64),
            4 => Some(Precision::F32),
            _ => None,
        }
    }
}

/// Order-k Markov byte stream. Each context of `order` previous symbols has
/// `branching` equally likely successors drawn from `0..alphabet`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    #[serde(default = "one")]
    pub order: usize,
    #[serde(default = "full_alphabet")]
    pub alphabet: usize,
    #[serde(default = "one")]
    pub branching: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn full_alphabet() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Raw bytes of a file; relative paths resolve against the config file.
    Corpus(PathBuf),
    Synthetic(SynthSpec),
}

fn default_accum() -> usize {
    1
}

fn default_eval_interval() -> u64 {
    100
}

fn default_eval_sequences() -> usize {
    32
}

fn default_log_interval() -> u64 {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// One training run. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    pub model: ModelConfig,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub hp: HyperParams,
    #[serde(default)]
    pub schedule: Schedule,
    pub batch_size_sequences: usize,
    #[serde(default = "default_accum")]
    pub grad_accum_steps: usize,
    pub data: DataSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    /// Validation windows used for every evaluation.
    #[serde(default = "default_eval_sequences")]
    pub eval_sequences: usize,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    /// Record wall-clock milliseconds in metrics. Off by default so that
    /// reruns produce identical files.
    #[serde(default)]
    pub log_wall_time: bool,
}

impl TrainConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        if let Err(Error::Config(msg)) = cfg.validate() {
            return Err(Error::Config(anchor(src, &msg)));
        }
        Ok(cfg)
    }

    /// Read and validate a config file. Relative corpus paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&src)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
        if let DataSpec::Corpus(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hp.validate()?;
        self.schedule.validate()?;
        let positive = |v: usize, key: &str| {
            if v == 0 {
                Err(Error::Config(format!("{key} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(self.batch_size_sequences, "batch_size_sequences")?;
        positive(self.grad_accum_steps, "grad_accum_steps")?;
        positive(self.eval_sequences, "eval_sequences")?;
        positive(self.eval_interval as usize, "eval_interval")?;
        positive(self.log_interval as usize, "log_interval")?;
        if let DataSpec::Synthetic(s) = &self.data {
            if s.length <= self.model.context_len {
                return Err(Error::Config(format!(
                    "data.synthetic.length ({}) must exceed model.context_len ({})",
                    s.length, self.model.context_len
                )));
            }
            if s.order == 0 || s.alphabet == 0 || s.alphabet > self.model.vocab_size || s.branching == 0 {
                return Err(Error::Config(
                    "data.synthetic needs order >= 1, 1 <= alphabet <= model.vocab_size and branching >= 1".into(),
                ));
            }
        }
        if matches!(self.data, DataSpec::Corpus(_)) && self.model.vocab_size < 256 {
            return Err(Error::Config("model.vocab_size must be 256 for byte corpora".into()));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size_sequences * self.grad_accum_steps
    }

    pub fn tokens_per_step(&self) -> u64 {
        (self.effective_batch() * self.model.context_len) as u64
    }

    pub fn run_label(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.optimizer.to_string())
    }
}

/// Steps for roughly 20 training tokens per parameter at this config's
/// effective batch. Offered as a preset, never enforced.
pub fn chinchilla_total_steps(cfg: &TrainConfig) -> u64 {
    let n: usize = cfg
        .model
        .param_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    (20 * n as u64).div_ceil(cfg.tokens_per_step().max(1))
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Prefix a validation message with the line where its key is set, when the
/// key appears in the source.
fn anchor(src: &str, msg: &str) -> String {
    let key = msg.split_whitespace().next().unwrap_or("");
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().unwrap_or("");
    let section = parts.join(".");
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        let name = t.split('=').next().unwrap_or("").trim();
        if !leaf.is_empty() && name == leaf && current == section && t.contains('=') {
            return format!("line {}: {msg}", i + 1);
        }
    }
    msg.to_string()
}
