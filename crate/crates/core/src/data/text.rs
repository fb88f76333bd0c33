//! Whitespace-separated text records: the label first, then every
//! reflectivity integer in t-major, channel, row-major order. Blank lines
//! and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Dims, RadarRecord};

/// Parses one record line. `line_no` is only used in error messages.
pub fn parse_text_record(line: &str, dims: Dims, line_no: usize) -> Result<RadarRecord, DataError> {
    dims.validate()?;
    let expected = dims.values() + 1;
    let found = line.split_whitespace().count();
    if found != expected {
        return Err(DataError::TokenCount { line: line_no, expected, found });
    }
    let mut tokens = line.split_whitespace().enumerate();
    let (_, first) = tokens.next().expect("token count checked");
    let label: f64 =
        first.parse().map_err(|_| DataError::NotNumeric { line: line_no, token: 0, text: first.to_string() })?;
    if !(label.is_finite() && label >= 0.0) {
        return Err(DataError::BadLabel { line: line_no, value: label });
    }
    let mut frames = Vec::with_capacity(dims.values());
    for (token, text) in tokens {
        let value: i64 =
            text.parse().map_err(|_| DataError::NotNumeric { line: line_no, token, text: text.to_string() })?;
        if !(0..=255).contains(&value) {
            return Err(DataError::OutOfRange { line: line_no, token, value });
        }
        frames.push(value as u8);
    }
    RadarRecord::new(dims, label, frames)
}

/// Parses a whole text dataset. Line numbers in errors are 1-based.
pub fn parse_text_file(contents: &str, dims: Dims) -> Result<Vec<RadarRecord>, DataError> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_text_record(l, dims, i + 1))
        .collect()
}

pub fn read_text(path: impl AsRef<Path>, dims: Dims) -> Result<Vec<RadarRecord>, DataError> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_text_file(&contents, dims)
}

/// One line, without the trailing newline. Labels use Rust's shortest
/// round-trip formatting so text files reparse to identical records.
pub fn format_text_record(record: &RadarRecord) -> String {
    let mut s = String::with_capacity(record.frames().len() * 4 + 24);
    write!(s, "{}", record.label()).expect("write to string");
    for v in record.frames() {
        write!(s, " {v}").expect("write to string");
    }
    s
}

pub fn write_text(records: &[RadarRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format_text_record(r));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
