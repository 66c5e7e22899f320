use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ImuRecording, PreprocessedSample, CHANNELS, SAMPLE_LENGTH, TARGET_RATE_HZ};

/// Floor on the per-channel standard deviation.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_hz: f64,
    pub length: usize,
    /// Normalize the unpadded signal and pad afterwards (ablation; the
    /// default normalizes after padding).
    pub normalize_before_padding: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_hz: TARGET_RATE_HZ,
            length: SAMPLE_LENGTH,
            normalize_before_padding: false,
        }
    }
}

/// Per-channel linear interpolation onto `t_k = k / target_hz`,
/// `k = 0..=floor((T - 1) * target / source)`.
pub fn resample(rec: &ImuRecording, target_hz: f64) -> Result<ImuRecording> {
    if !(target_hz > 0.0) {
        return Err(Error::invalid(format!("target rate {target_hz} must be positive")));
    }
    let source = rec.sampling_rate_hz;
    if source == target_hz {
        return Ok(rec.clone());
    }
    let t = rec.len();
    if t < 2 {
        return Err(Error::invalid(format!(
            "cannot resample a recording of {t} sample(s) from {source} Hz to {target_hz} Hz"
        )));
    }
    let n_out = ((t - 1) as f64 * target_hz / source).floor() as usize + 1;
    let ratio = source / target_hz;
    let mut out = Vec::with_capacity(CHANNELS * n_out);
    for ch in 0..CHANNELS {
        let row = rec.samples.row(ch);
        for k in 0..n_out {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(t - 1);
            let frac = pos - i as f64;
            let v = if i + 1 < t {
                row[i] + (row[i + 1] - row[i]) * frac
            } else {
                row[t - 1]
            };
            out.push(v);
        }
    }
    Ok(ImuRecording {
        samples: Tensor::new(vec![CHANNELS, n_out], out)?,
        sampling_rate_hz: target_hz,
        label: rec.label,
        subject_id: rec.subject_id.clone(),
        repetition: rec.repetition,
    })
}

/// Zero-pads at the tail or keeps the first `length` columns.
pub fn fix_length(samples: &Tensor<f64>, length: usize) -> Result<Tensor<f64>> {
    let (c, t) = samples.dims2()?;
    if t == 0 {
        return Err(Error::Empty("fix_length"));
    }
    let keep = t.min(length);
    let mut out = vec![0.0; c * length];
    for ch in 0..c {
        out[ch * length..ch * length + keep].copy_from_slice(&samples.row(ch)[..keep]);
    }
    Tensor::new(vec![c, length], out)
}

/// Per-channel `(x - mean) / max(std, 1e-8)` with population std; constant
/// channels become zero.
pub fn zscore(matrix: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, t) = matrix.dims2()?;
    if t == 0 {
        return Err(Error::Empty("zscore"));
    }
    let mut out = matrix.clone();
    for ch in 0..c {
        let row = out.row_mut(ch);
        let first = row[0];
        if row.iter().all(|&v| v == first) {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let n = t as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(STD_EPS);
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    Ok(out)
}

/// resample, then fix length, then z-score.
pub fn preprocess<T: Scalar>(rec: &ImuRecording, config: &PreprocessConfig) -> Result<PreprocessedSample<T>> {
    let resampled = resample(rec, config.target_hz)?;
    let matrix = if config.normalize_before_padding {
        fix_length(&zscore(&resampled.samples)?, config.length)?
    } else {
        zscore(&fix_length(&resampled.samples, config.length)?)?
    };
    Ok(PreprocessedSample {
        matrix: matrix.cast(),
        label: rec.label,
        subject_id: rec.subject_id.clone(),
    })
}

pub fn preprocess_all<T: Scalar>(recs: &[ImuRecording], config: &PreprocessConfig) -> Result<Vec<PreprocessedSample<T>>> {
    recs.iter().map(|r| preprocess(r, config)).collect()
}
