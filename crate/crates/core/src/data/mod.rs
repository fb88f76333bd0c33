//! Radar datasets: record types, the text and `DRN1` binary formats,
//! seeded splitting and minibatching, and the synthetic storm generator.

mod binary;
mod split;
mod synth;
mod text;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub use binary::{decode_binary, encode_binary, read_binary, write_binary, BINARY_MAGIC, BINARY_VERSION};
pub(crate) use split::seeded_rng;
pub use split::{minibatches, split, DatasetSplit, PAPER_RATIOS};
pub use synth::{central_crop, central_mean, synth_generate, synth_label, SynthConfig, LABEL_WINDOW};
pub use text::{format_text_record, parse_text_file, parse_text_record, read_text, write_text};

/// Divisor mapping stored reflectivity integers onto `[0, 1]`.
pub const REFLECTIVITY_SCALE: f64 = 255.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected {expected} tokens (label + values), found {found}")]
    TokenCount { line: usize, expected: usize, found: usize },
    #[error("line {line}, token {token}: `{text}` is not a number")]
    NotNumeric { line: usize, token: usize, text: String },
    #[error("line {line}, token {token}: reflectivity {value} outside [0, 255]")]
    OutOfRange { line: usize, token: usize, value: i64 },
    #[error("line {line}: label {value} must be finite and non-negative")]
    BadLabel { line: usize, value: f64 },
    #[error("record holds {found} values, dimensions {dims} need {expected}")]
    ValueCount { dims: Dims, expected: usize, found: usize },
    #[error("record dimensions {found} differ from dataset dimensions {expected}")]
    MixedDims { expected: Dims, found: Dims },
    #[error("bad magic: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("header declares {declared} records but the payload holds {found}")]
    CountMismatch { declared: u64, found: u64 },
    #[error("invalid dimensions {0}: every extent must be at least 1")]
    BadDims(Dims),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

/// Sequence geometry: time steps, channels (altitudes), height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    /// 15 frames of 4 altitude channels on a 101×101 grid.
    pub const CANONICAL: Dims = Dims { t: 15, c: 4, h: 101, w: 101 };

    pub const fn new(t: usize, c: usize, h: usize, w: usize) -> Self {
        Self { t, c, h, w }
    }

    pub fn values(&self) -> usize {
        self.t * self.c * self.h * self.w
    }

    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.t == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(DataError::BadDims(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.t, self.c, self.h, self.w)
    }
}

impl std::str::FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("bad dimensions `{s}`: {e}"))?;
        match parts[..] {
            [t, c, h, w] if t > 0 && c > 0 && h > 0 && w > 0 => Ok(Dims::new(t, c, h, w)),
            _ => Err(format!("dimensions must be four positive integers T,C,H,W, got `{s}`")),
        }
    }
}

/// One labeled sample: `T` frames of `C × H × W` reflectivity integers
/// (t-major, then channel, then row-major) and a rainfall amount.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarRecord {
    dims: Dims,
    label: f64,
    frames: Vec<u8>,
}

impl RadarRecord {
    pub fn new(dims: Dims, label: f64, frames: Vec<u8>) -> Result<Self, DataError> {
        dims.validate()?;
        if frames.len() != dims.values() {
            return Err(DataError::ValueCount { dims, expected: dims.values(), found: frames.len() });
        }
        if !(label.is_finite() && label >= 0.0) {
            return Err(DataError::BadLabel { line: 0, value: label });
        }
        Ok(Self { dims, label, frames })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn frames(&self) -> &[u8] {
        &self.frames
    }

    /// The `C × H × W` values of time step `t`.
    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.dims.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, c: usize, y: usize, x: usize) -> u8 {
        let d = self.dims;
        self.frames[((t * d.c + c) * d.h + y) * d.w + x]
    }
}

/// Frames as `[C, H, W]` tensors divided by `255`.
pub fn normalize(record: &RadarRecord) -> Vec<Tensor> {
    normalize_with(record, REFLECTIVITY_SCALE)
}

pub fn normalize_with(record: &RadarRecord, scale: f64) -> Vec<Tensor> {
    let d = record.dims;
    (0..d.t)
        .map(|t| {
            let v = record.frame(t).iter().map(|&x| f64::from(x) / scale).collect();
            Tensor::new(&[d.c, d.h, d.w], v).expect("frame matches dims")
        })
        .collect()
}
