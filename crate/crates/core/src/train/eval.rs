use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{index_to_letter, PreprocessedSample};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::scalar::Scalar;
use crate::NUM_CLASSES;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix([[0; NUM_CLASSES]; NUM_CLASSES])
    }
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.0[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.0.iter_mut().zip(&other.0) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.0.map(|r| r.iter().sum())
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    /// Two letters in alphabetical order, e.g. `D-P`.
    pub pair: String,
    pub count: u64,
    /// Share of all off-diagonal counts, in percent.
    pub percent: f64,
}

/// Most confused unordered letter pairs, both directions summed.
pub fn top_confusions(cm: &ConfusionMatrix, k: usize) -> Vec<ConfusionPair> {
    let off_diagonal = cm.total() - cm.trace();
    if off_diagonal == 0 {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    for a in 0..NUM_CLASSES {
        for b in a + 1..NUM_CLASSES {
            let count = cm.0[a][b] + cm.0[b][a];
            if count > 0 {
                pairs.push(ConfusionPair {
                    pair: format!("{}-{}", index_to_letter(a), index_to_letter(b)),
                    count,
                    percent: 100.0 * count as f64 / off_diagonal as f64,
                });
            }
        }
    }
    // stable sort keeps the alphabetical enumeration order on ties
    pairs.sort_by(|x, y| y.count.cmp(&x.count));
    pairs.truncate(k);
    pairs
}

/// Confusion matrix as CSV with a `true\pred` corner cell.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\pred");
    for c in 0..NUM_CLASSES {
        write!(out, ",{}", index_to_letter(c)).unwrap();
    }
    out.push('\n');
    for (t, row) in cm.0.iter().enumerate() {
        out.push(index_to_letter(t));
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub config: serde_json::Value,
    /// Unweighted mean of the per-subject accuracies.
    pub mean_accuracy: f64,
    /// Correct predictions over all samples.
    pub pooled_accuracy: f64,
    pub per_subject: BTreeMap<String, f64>,
    pub confusion: ConfusionMatrix,
    pub top_confusions: Vec<ConfusionPair>,
    pub skipped_anchors: usize,
    pub n_samples: u64,
    pub wall_clock_s: Option<f64>,
}

impl EvalReport {
    /// Builds a report from per-subject `(correct, total)` tallies.
    pub fn from_tallies(tallies: &BTreeMap<String, (u64, u64)>, confusion: ConfusionMatrix, k: usize) -> Result<Self> {
        if tallies.is_empty() {
            return Err(Error::Evaluation("no samples evaluated".into()));
        }
        let per_subject: BTreeMap<String, f64> = tallies
            .iter()
            .map(|(s, &(c, t))| (s.clone(), c as f64 / t as f64))
            .collect();
        let mean_accuracy = per_subject.values().sum::<f64>() / per_subject.len() as f64;
        Ok(EvalReport {
            version: crate::VERSION.into(),
            config: serde_json::Value::Null,
            mean_accuracy,
            pooled_accuracy: confusion.accuracy(),
            per_subject,
            top_confusions: top_confusions(&confusion, k),
            n_samples: confusion.total(),
            confusion,
            skipped_anchors: 0,
            wall_clock_s: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Per-subject `(correct, total)` tallies and the confusion matrix.
pub(crate) fn tally<'a, T: Scalar>(
    bundle: &ModelBundle<T>,
    samples: impl IntoIterator<Item = &'a PreprocessedSample<T>>,
    tallies: &mut BTreeMap<String, (u64, u64)>,
    cm: &mut ConfusionMatrix,
) -> Result<()> {
    for s in samples {
        let pred = bundle.predict(&s.matrix)?;
        cm.add(s.label, pred);
        let e = tallies.entry(s.subject_id.clone()).or_default();
        e.0 += u64::from(pred == s.label);
        e.1 += 1;
    }
    Ok(())
}

/// Inference-mode classification of every sample.
pub fn evaluate<T: Scalar>(bundle: &ModelBundle<T>, samples: &[PreprocessedSample<T>]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Evaluation("cannot evaluate an empty sample set".into()));
    }
    let mut tallies = BTreeMap::new();
    let mut cm = ConfusionMatrix::default();
    tally(bundle, samples, &mut tallies, &mut cm)?;
    EvalReport::from_tallies(&tallies, cm, 5)
}

/// Writes one CSV row per sample: subject, letter, `r` and, for stage-1
/// bundles, `z`. Returns the row count.
pub fn export_embeddings<T: Scalar>(bundle: &ModelBundle<T>, samples: &[PreprocessedSample<T>], path: &Path) -> Result<usize> {
    let d = bundle.embedding_dim();
    let mut out = String::from("subject,label");
    for j in 0..d {
        write!(out, ",r{j}").unwrap();
    }
    if bundle.projection.is_some() {
        for j in 0..bundle.config.proj_dim {
            write!(out, ",z{j}").unwrap();
        }
    }
    out.push('\n');
    for s in samples {
        let r = bundle.encode(&s.matrix)?;
        write!(out, "{},{}", s.subject_id, index_to_letter(s.label)).unwrap();
        for v in r.data() {
            write!(out, ",{:.6}", v.as_f64()).unwrap();
        }
        if bundle.projection.is_some() {
            for v in bundle.project(&r)?.data() {
                write!(out, ",{:.6}", v.as_f64()).unwrap();
            }
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(samples.len())
}
