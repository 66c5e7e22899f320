use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{index_to_letter, letter_to_index, read_csv, ImuRecording};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    dataset_name: String,
    sampling_rate_hz: f64,
    samples: Vec<EntryFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    path: String,
    subject: String,
    label: String,
    repetition: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// As written in the manifest, relative to its directory.
    pub path: String,
    pub subject_id: String,
    pub label: usize,
    pub repetition: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub sampling_rate_hz: f64,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Serializes in the on-disk schema.
    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFile {
            dataset_name: self.dataset_name.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            samples: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    path: e.path.clone(),
                    subject: e.subject_id.clone(),
                    label: index_to_letter(e.label).to_string(),
                    repetition: e.repetition,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a manifest; every referenced CSV must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.samples.is_empty() {
        return Err(Error::Manifest(format!("{}: no samples", path.display())));
    }
    if !(file.sampling_rate_hz > 0.0) {
        return Err(Error::Manifest(format!(
            "{}: sampling_rate_hz must be positive",
            path.display()
        )));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    let mut entries = Vec::with_capacity(file.samples.len());
    for (idx, e) in file.samples.into_iter().enumerate() {
        let label = letter_to_index(&e.label).ok_or_else(|| {
            Error::Manifest(format!("entry {idx} ({}): unknown label `{}`", e.path, e.label))
        })?;
        if !seen.insert((e.subject.clone(), label, e.repetition)) {
            return Err(Error::Manifest(format!(
                "entry {idx} ({}): duplicate (subject {}, label {}, repetition {})",
                e.path,
                e.subject,
                index_to_letter(label),
                e.repetition
            )));
        }
        if !root.join(&e.path).is_file() {
            missing.push(root.join(&e.path).display().to_string());
        }
        entries.push(ManifestEntry {
            path: e.path,
            subject_id: e.subject,
            label,
            repetition: e.repetition,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("missing sample files: {}", missing.join(", "))));
    }
    Ok(DatasetManifest {
        dataset_name: file.dataset_name,
        sampling_rate_hz: file.sampling_rate_hz,
        root,
        entries,
    })
}

/// Reads every CSV in manifest order.
pub fn load_recordings(manifest: &DatasetManifest) -> Result<Vec<ImuRecording>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let samples = read_csv(&manifest.resolve(e))?;
            ImuRecording::new(
                samples,
                manifest.sampling_rate_hz,
                e.label,
                e.subject_id.clone(),
                e.repetition,
            )
        })
        .collect()
}
