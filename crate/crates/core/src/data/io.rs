use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::CHANNELS;

pub const CSV_HEADER: &str = "ax,ay,az,gx,gy,gz";

/// Reads a sample CSV into a `[6, T]` tensor.
pub fn read_csv(path: &Path) -> Result<Tensor<f64>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(parse_err(format!("header is `{header}`, expected `{CSV_HEADER}`")));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != CHANNELS {
            return Err(parse_err(format!("row {}: {} fields", line + 1, record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {}: `{field}` is not a number", line + 1)))?;
            columns[c].push(v);
        }
    }
    let t = columns[0].len();
    if t == 0 {
        return Err(parse_err("no data rows".into()));
    }
    Tensor::new(vec![CHANNELS, t], columns.concat())
}

/// Writes a `[6, T]` tensor as a sample CSV with six decimals.
pub fn write_csv(path: &Path, samples: &Tensor<f64>) -> Result<()> {
    let (c, t) = samples.dims2()?;
    if c != CHANNELS {
        return Err(Error::invalid(format!("expected {CHANNELS} channels, got {c}")));
    }
    let mut out = String::with_capacity(t * 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in 0..t {
        for ch in 0..c {
            if ch > 0 {
                out.push(',');
            }
            let v = samples.data()[ch * t + s];
            // avoid "-0.000000"
            let v = if v.abs() < 5e-7 { 0.0 } else { v };
            write!(out, "{v:.6}").expect("writing to a String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
