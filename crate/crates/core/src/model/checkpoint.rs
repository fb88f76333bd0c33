//! `DRNP` parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        b"DRNP"
//! version      u32 = 1
//! kind         u8   (0 linear, 1 fc-lstm, 2 conv-lstm)
//! stacks hidden kernel pool   u32 × 4
//! T C H W      u32 × 4
//! input_scale  f64
//! count        u32
//! count × { name_len u32, name utf-8, rank u32, extents u64 × rank, values f64 × product }
//! ```
//!
//! Tensors are written in name order.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Model, ModelError, ModelKind, ModelSpec, NamedTensors};
use crate::data::Dims;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRNP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a DRNP checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("unknown model kind code {0}")]
    BadKind(u8),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("invalid tensor `{name}`: {message}")]
    BadTensor { name: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(spec.kind.code());
    for v in [spec.stacks, spec.hidden, spec.kernel, spec.pool] {
        put_u32(&mut out, v);
    }
    for v in [spec.input.t, spec.input.c, spec.input.h, spec.input.w] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&spec.input_scale.to_le_bytes());
    put_u32(&mut out, model.params().len());
    for (name, t) in model.params() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let code = c.take(1)?[0];
    let kind = ModelKind::from_code(code).ok_or(CheckpointError::BadKind(code))?;
    let (stacks, hidden, kernel, pool) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let input = Dims::new(c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let input_scale = c.f64()?;
    let spec = ModelSpec { kind, stacks, hidden, kernel, pool, input, input_scale };
    let count = c.u32()?;
    let mut params = NamedTensors::new();
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| CheckpointError::BadName)?.to_string();
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u64().map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
        let n = match n {
            Some(n) if n <= (bytes.len() - c.pos) / 8 => n,
            _ => return Err(CheckpointError::Truncated(c.pos)),
        };
        let values = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        let t = Tensor::new(&shape, values)
            .map_err(|e| CheckpointError::BadTensor { name: name.clone(), message: e.to_string() })?;
        params.insert(name, t);
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - c.pos));
    }
    Ok(Model::new(spec, params)?)
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes)
}
