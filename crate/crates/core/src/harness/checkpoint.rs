//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MERITCKPT"  u32 version  u64 header_len  header (JSON)
//! u32 tensor_count, then per tensor:
//!     u32 name_len  name  u32 ndim  u64 dims[ndim]  u8 width  data
//! u32 state_count, then per state:
//!     u32 name_len  name  u64 step  m data  v data   (shape/width of the tensor)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Precision;
use crate::error::{Error, Result};
use crate::nanoformer::ModelConfig;
use crate::optim::{HyperParams, OptimState, OptimizerKind};
use crate::params::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 9] = b"MERITCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub step: u64,
    pub precision: Precision,
    pub params: Params,
    pub states: BTreeMap<String, OptimState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    optimizer: OptimizerKind,
    hp: HyperParams,
    step: u64,
    precision: Precision,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
}

fn put_data(out: &mut Vec<u8>, data: &[f64], precision: Precision) {
    for &x in data {
        match precision {
            Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
            Precision::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows".into()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))
    }

    fn data(&mut self, n: usize, precision: Precision) -> Result<Vec<f64>> {
        let width = precision.width() as usize;
        let bytes = self.take(
            n.checked_mul(width)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let out: Vec<f64> = match precision {
            Precision::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Precision::F32 => bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("checkpoint holds a non-finite value".into()));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            optimizer: self.optimizer,
            hp: self.hp.clone(),
            step: self.step,
            precision: self.precision,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);

        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_name(&mut out, name);
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            out.push(self.precision.width());
            put_data(&mut out, t.data(), self.precision);
        }

        put_u32(&mut out, self.states.len() as u32);
        for (name, st) in &self.states {
            put_name(&mut out, name);
            put_u64(&mut out, st.step);
            put_data(&mut out, st.m.data(), self.precision);
            put_data(&mut out, st.v.data(), self.precision);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.len()?;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        header.model.validate().map_err(|e| Error::Format(e.to_string()))?;

        let mut params = Params::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let width = r.u8()?;
            if width != header.precision.width() {
                return Err(Error::Format(format!(
                    "{name}: element width {width} does not match header"
                )));
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
            let data = r.data(n, header.precision)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
            params.insert(name, t);
        }
        header
            .model
            .check_params(&params)
            .map_err(|e| Error::Format(e.to_string()))?;

        let mut states = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let shape = params
                .get(&name)
                .map_err(|_| Error::Format(format!("optimizer state for unknown tensor {name}")))?
                .shape()
                .to_vec();
            let step = r.u64()?;
            let n = shape.iter().product();
            let m = Tensor::new(shape.clone(), r.data(n, header.precision)?)?;
            let v = Tensor::new(shape, r.data(n, header.precision)?)?;
            states.insert(name, OptimState { m, v, step });
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            model: header.model,
            optimizer: header.optimizer,
            hp: header.hp,
            step: header.step,
            precision: header.precision,
            params,
            states,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
