//! Recordings, preprocessing, splitting and batching.

mod io;
mod manifest;
mod preprocess;
mod split;
pub mod synth;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use io::{read_csv, write_csv, CSV_HEADER};
pub use manifest::{load_manifest, load_recordings, DatasetManifest, ManifestEntry};
pub use preprocess::{fix_length, preprocess, preprocess_all, resample, zscore, PreprocessConfig};
pub use split::{
    loso_splits, make_batches, train_val_split, BatchMode, Batches, Fold, Split,
};
pub use synth::{synth_generate, synth_recordings, SynthConfig};

/// Accelerometer x/y/z then gyroscope x/y/z.
pub const CHANNELS: usize = 6;
/// Fixed sample length fed to every model.
pub const SAMPLE_LENGTH: usize = 155;
/// Rate every recording is brought to before length fixing.
pub const TARGET_RATE_HZ: f64 = 62.0;

pub fn letter_to_index(s: &str) -> Option<usize> {
    let mut chars = s.trim().chars();
    let c = chars.next()?.to_ascii_uppercase();
    if chars.next().is_some() || !c.is_ascii_uppercase() {
        return None;
    }
    Some(c as usize - 'A' as usize)
}

pub fn index_to_letter(i: usize) -> char {
    assert!(i < crate::NUM_CLASSES, "class index {i} out of range");
    (b'A' + i as u8) as char
}

/// Raw 6-channel time series with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecording {
    /// `[6, T]` in device-native units.
    pub samples: Tensor<f64>,
    pub sampling_rate_hz: f64,
    /// Class index, 0 = 'A'.
    pub label: usize,
    pub subject_id: String,
    pub repetition: u32,
}

impl ImuRecording {
    pub fn new(samples: Tensor<f64>, sampling_rate_hz: f64, label: usize, subject_id: impl Into<String>, repetition: u32) -> Result<Self> {
        let (c, t) = samples.dims2()?;
        if c != CHANNELS {
            return Err(Error::invalid(format!("recording has {c} channels, expected {CHANNELS}")));
        }
        if t == 0 {
            return Err(Error::Empty("recording"));
        }
        if !(sampling_rate_hz > 0.0) {
            return Err(Error::invalid(format!("sampling rate {sampling_rate_hz} must be positive")));
        }
        if label >= crate::NUM_CLASSES {
            return Err(Error::invalid(format!("label index {label} outside A..Z")));
        }
        Ok(ImuRecording {
            samples,
            sampling_rate_hz,
            label,
            subject_id: subject_id.into(),
            repetition,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A `[6, 155]` normalized sample ready for a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSample<T> {
    pub matrix: Tensor<T>,
    pub label: usize,
    pub subject_id: String,
}

impl<T: Scalar> PreprocessedSample<T> {
    pub fn cast<U: Scalar>(&self) -> PreprocessedSample<U> {
        PreprocessedSample {
            matrix: self.matrix.cast(),
            label: self.label,
            subject_id: self.subject_id.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_round_trip() {
        assert_eq!(letter_to_index("A"), Some(0));
        assert_eq!(letter_to_index("z"), Some(25));
        assert_eq!(letter_to_index("AB"), None);
        assert_eq!(letter_to_index("1"), None);
        assert_eq!(index_to_letter(3), 'D');
    }
}
