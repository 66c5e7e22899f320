//! Binary checkpoint format.
//!
//! Layout: `SCLR`, a version byte, a little-endian `u32` header length, a
//! JSON header and then the tensor payloads as little-endian `f32` in
//! directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelBundle, ModelConfig, Provenance};
use crate::error::{Error, Result};
use crate::layers::Sequential;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SCLR";
pub const VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub arch: String,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub has_projection: bool,
    pub tensors: Vec<TensorEntry>,
}

fn sections<T: Scalar>(b: &ModelBundle<T>) -> Vec<(&'static str, &Sequential<T>)> {
    let mut out = vec![("encoder", &b.encoder)];
    if let Some(p) = &b.projection {
        out.push(("projection", p));
    }
    out.push(("classifier", &b.classifier));
    out
}

/// Encodes a bundle into the checkpoint byte layout.
pub fn to_bytes<T: Scalar>(bundle: &ModelBundle<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (prefix, seq) in sections(bundle) {
        for (name, p) in seq.param_names().into_iter().zip(seq.params()) {
            tensors.push(TensorEntry {
                name: format!("{prefix}.{name}"),
                shape: p.shape().to_vec(),
                offset: payload.len(),
            });
            for v in p.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        arch: bundle.config.arch.kind.tag().to_string(),
        config: bundle.config.clone(),
        provenance: bundle.provenance.clone(),
        has_projection: bundle.projection.is_some(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses the preamble and header without touching the payload.
pub fn read_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Checkpoint(format!("truncated file: {} bytes, preamble needs {PREAMBLE}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}, expected \"SCLR\"", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {} (expected {VERSION})", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let end = PREAMBLE
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("truncated file: header claims {len} bytes")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    Ok((header, end))
}

/// Decodes a checkpoint produced by [`to_bytes`].
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelBundle<T>> {
    let (header, start) = read_header(bytes)?;
    if header.arch != header.config.arch.kind.tag() {
        return Err(Error::Checkpoint(format!(
            "header arch `{}` disagrees with config `{}`",
            header.arch,
            header.config.arch.kind.tag()
        )));
    }
    let payload = &bytes[start..];
    let mut bundle = ModelBundle::<T>::build(header.config.clone(), header.has_projection, 0)?;
    bundle.provenance = header.provenance;

    let mut entries = header.tensors.iter();
    let mut expected_offset = 0;
    let mut fill = |prefix: &str, seq: &mut Sequential<T>| -> Result<()> {
        let names = seq.param_names();
        for (name, p) in names.into_iter().zip(seq.params_mut()) {
            let full = format!("{prefix}.{name}");
            let e = entries
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("tensor directory is missing `{full}`")))?;
            if e.name != full || e.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape disagreement: directory has `{}` {:?}, model expects `{full}` {:?}",
                    e.name,
                    e.shape,
                    p.shape()
                )));
            }
            if e.offset != expected_offset {
                return Err(Error::Checkpoint(format!("tensor `{full}` at offset {}, expected {expected_offset}", e.offset)));
            }
            let nbytes = p.len() * 4;
            let raw = payload.get(e.offset..e.offset + nbytes).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated file: tensor `{full}` needs bytes {}..{}, payload has {}",
                    e.offset,
                    e.offset + nbytes,
                    payload.len()
                ))
            })?;
            for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = T::lit(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
            }
            expected_offset += nbytes;
        }
        Ok(())
    };
    fill("encoder", &mut bundle.encoder)?;
    if let Some(p) = bundle.projection.as_mut() {
        fill("projection", p)?;
    }
    fill("classifier", &mut bundle.classifier)?;
    if let Some(extra) = entries.next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{}` in directory", extra.name)));
    }
    if payload.len() != expected_offset {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, directory accounts for {expected_offset}",
            payload.len()
        )));
    }
    Ok(bundle)
}

pub fn save_checkpoint<T: Scalar>(bundle: &ModelBundle<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(bundle)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelBundle<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
