//! Synthetic airwriting-like recordings for desk-scale runs.
//!
//! Each letter owns a fixed frequency and pair of harmonic amplitudes per
//! channel; each subject perturbs phase and amplitude; each repetition
//! draws its own duration and noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

use super::{index_to_letter, write_csv, DatasetManifest, ImuRecording, ManifestEntry, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dataset_name: String,
    pub n_subjects: usize,
    pub n_reps: usize,
    pub rate_hz: f64,
    pub seed: u64,
    pub subject_prefix: String,
    /// Added to the subject index when keying subject and sample streams, so
    /// a second population drawn from the same alphabet gets new subjects.
    pub subject_offset: u64,
    pub duration_s: (f64, f64),
    pub freq_hz: (f64, f64),
    pub amplitude: (f64, f64),
    pub phase_jitter: (f64, f64),
    pub amplitude_jitter: (f64, f64),
    pub noise_sigma: f64,
    /// In-plane rotation of the accelerometer and gyroscope x/y axes, as
    /// from a sensor mounted at a different angle.
    #[serde(default)]
    pub mount_rotation_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dataset_name: "synthetic".into(),
            n_subjects: 10,
            n_reps: 5,
            rate_hz: 62.0,
            seed: 42,
            subject_prefix: "S".into(),
            subject_offset: 0,
            duration_s: (1.5, 3.0),
            freq_hz: (0.5, 3.0),
            amplitude: (0.2, 1.0),
            phase_jitter: (0.0, PI / 4.0),
            amplitude_jitter: (0.8, 1.2),
            noise_sigma: 0.05,
            mount_rotation_deg: 0.0,
        }
    }
}

impl SynthConfig {
    /// A "different device" population: same letters, new subjects, a
    /// higher native rate, a shifted subject-jitter distribution and a
    /// rotated mounting.
    pub fn target_device(&self) -> Self {
        SynthConfig {
            dataset_name: format!("{}-target", self.dataset_name),
            rate_hz: 200.0,
            subject_prefix: "T".into(),
            subject_offset: 10_000,
            phase_jitter: (PI / 4.0, PI / 2.0),
            amplitude_jitter: (0.6, 1.4),
            noise_sigma: 0.1,
            mount_rotation_deg: 30.0,
            ..self.clone()
        }
    }

    pub fn subject_id(&self, s: usize) -> String {
        format!("{}{:02}", self.subject_prefix, s + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::invalid(format!(
                "{} subject(s) requested; leave-one-subject-out evaluation needs at least 2",
                self.n_subjects
            )));
        }
        if self.n_reps < 1 {
            return Err(Error::invalid("at least one repetition is required"));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        Ok(())
    }
}

struct LetterParams {
    freq: [f64; CHANNELS],
    a: [f64; CHANNELS],
    b: [f64; CHANNELS],
}

fn letter_params(cfg: &SynthConfig, k: usize) -> LetterParams {
    let mut rng = Rng::keyed(cfg.seed, Stream::SynthLetter, &[k as u64]);
    let mut p = LetterParams {
        freq: [0.0; CHANNELS],
        a: [0.0; CHANNELS],
        b: [0.0; CHANNELS],
    };
    for c in 0..CHANNELS {
        p.freq[c] = rng.uniform_range(cfg.freq_hz.0, cfg.freq_hz.1);
        p.a[c] = rng.uniform_range(cfg.amplitude.0, cfg.amplitude.1);
        p.b[c] = rng.uniform_range(cfg.amplitude.0, cfg.amplitude.1);
    }
    p
}

/// Rotates channel pairs (0, 1) and (3, 4) of a `[6, t_len]` buffer.
fn rotate_mounting(data: &mut [f64], t_len: usize, degrees: f64) {
    if degrees == 0.0 {
        return;
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    for base in [0, 3] {
        let (x, rest) = data[base * t_len..].split_at_mut(t_len);
        for (xv, yv) in x.iter_mut().zip(&mut rest[..t_len]) {
            (*xv, *yv) = (cos * *xv - sin * *yv, sin * *xv + cos * *yv);
        }
    }
}

/// All recordings, ordered subject-major, then letter, then repetition.
pub fn synth_recordings(cfg: &SynthConfig) -> Result<Vec<ImuRecording>> {
    cfg.validate()?;
    let letters: Vec<LetterParams> = (0..NUM_CLASSES).map(|k| letter_params(cfg, k)).collect();
    let mut out = Vec::with_capacity(cfg.n_subjects * NUM_CLASSES * cfg.n_reps);
    for s in 0..cfg.n_subjects {
        let skey = s as u64 + cfg.subject_offset;
        let mut srng = Rng::keyed(cfg.seed, Stream::SynthSubject, &[skey]);
        let mut phase = [0.0; CHANNELS];
        let mut gain = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            phase[c] = srng.uniform_range(cfg.phase_jitter.0, cfg.phase_jitter.1);
            gain[c] = srng.uniform_range(cfg.amplitude_jitter.0, cfg.amplitude_jitter.1);
        }
        for (k, lp) in letters.iter().enumerate() {
            for r in 0..cfg.n_reps {
                let mut rng = Rng::keyed(cfg.seed, Stream::SynthSample, &[skey, k as u64, r as u64]);
                let duration = rng.uniform_range(cfg.duration_s.0, cfg.duration_s.1);
                let t_len = ((duration * cfg.rate_hz).round() as usize).max(2);
                let mut data = vec![0.0; CHANNELS * t_len];
                for c in 0..CHANNELS {
                    for n in 0..t_len {
                        let t = n as f64 / cfg.rate_hz;
                        let w = 2.0 * PI * lp.freq[c] * t;
                        data[c * t_len + n] = lp.a[c] * gain[c] * (w + phase[c]).sin()
                            + lp.b[c] * (2.0 * w).sin()
                            + cfg.noise_sigma * rng.normal();
                    }
                }
                rotate_mounting(&mut data, t_len, cfg.mount_rotation_deg);
                out.push(ImuRecording::new(
                    Tensor::new(vec![CHANNELS, t_len], data)?,
                    cfg.rate_hz,
                    k,
                    cfg.subject_id(s),
                    r as u32 + 1,
                )?);
            }
        }
    }
    Ok(out)
}

/// Writes one CSV per recording under `out_dir/<subject>/` plus
/// `out_dir/manifest.json`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let recs = synth_recordings(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(recs.len());
    for rec in &recs {
        let dir = out_dir.join(&rec.subject_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rel = format!(
            "{}/{}_{:02}.csv",
            rec.subject_id,
            index_to_letter(rec.label),
            rec.repetition
        );
        write_csv(&out_dir.join(&rel), &rec.samples)?;
        entries.push(ManifestEntry {
            path: rel,
            subject_id: rec.subject_id.clone(),
            label: rec.label,
            repetition: rec.repetition,
        });
    }
    let manifest = DatasetManifest {
        dataset_name: cfg.dataset_name.clone(),
        sampling_rate_hz: cfg.rate_hz,
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
