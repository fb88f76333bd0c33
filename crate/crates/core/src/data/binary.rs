//! `DRN1` binary datasets.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    b"DRN1"
//! version  u32 = 1
//! T C H W  u32 × 4
//! count    u64
//! count × { label f64, T·C·H·W × u8 }
//! ```

use std::fs;
use std::path::Path;

use super::{DataError, Dims, RadarRecord};

pub const BINARY_MAGIC: &[u8; 4] = b"DRN1";
pub const BINARY_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 16 + 8;

pub fn encode_binary(records: &[RadarRecord]) -> Result<Vec<u8>, DataError> {
    let dims = records.first().map(|r| r.dims()).unwrap_or(Dims::new(1, 1, 1, 1));
    if let Some(r) = records.iter().find(|r| r.dims() != dims) {
        return Err(DataError::MixedDims { expected: dims, found: r.dims() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (8 + dims.values()));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    for e in [dims.t, dims.c, dims.h, dims.w] {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.label().to_le_bytes());
        out.extend_from_slice(r.frames());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(DataError::Truncated { offset: self.pos, needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Returns the dataset dimensions and its records.
pub fn decode_binary(bytes: &[u8]) -> Result<(Dims, Vec<RadarRecord>), DataError> {
    if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
        return Err(DataError::BadMagic { expected: "DRN1" });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != BINARY_VERSION {
        return Err(DataError::BadVersion { expected: BINARY_VERSION, found: version });
    }
    let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    dims.validate()?;
    let count = r.u64()?;
    let record_len = 8 + dims.values();
    let payload = (bytes.len() - r.pos) as u64;
    if payload != count * record_len as u64 {
        // a whole number of records that disagrees with the header is a
        // count mismatch; anything else is a truncation
        if payload % record_len as u64 == 0 {
            return Err(DataError::CountMismatch { declared: count, found: payload / record_len as u64 });
        }
        let needed = (count * record_len as u64).saturating_sub(payload) as usize;
        return Err(DataError::Truncated { offset: bytes.len(), needed: needed.max(1) });
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let label = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let frames = r.take(dims.values())?.to_vec();
        records.push(RadarRecord::new(dims, label, frames)?);
    }
    Ok((dims, records))
}

pub fn write_binary(records: &[RadarRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let bytes = encode_binary(records)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<(Dims, Vec<RadarRecord>), DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_binary(&bytes)
}
