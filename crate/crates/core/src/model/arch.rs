use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerSpec, Sequential};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// The five encoder families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "1dcnn")]
    Cnn1d,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "bilstm")]
    Bilstm,
    #[serde(rename = "1dcnn-lstm")]
    Cnn1dLstm,
    #[serde(rename = "1dcnn-bilstm")]
    Cnn1dBilstm,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Cnn1d,
        ArchKind::Lstm,
        ArchKind::Bilstm,
        ArchKind::Cnn1dLstm,
        ArchKind::Cnn1dBilstm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ArchKind::Cnn1d => "1dcnn",
            ArchKind::Lstm => "lstm",
            ArchKind::Bilstm => "bilstm",
            ArchKind::Cnn1dLstm => "1dcnn-lstm",
            ArchKind::Cnn1dBilstm => "1dcnn-bilstm",
        }
    }

    fn has_convs(self) -> bool {
        matches!(self, ArchKind::Cnn1d | ArchKind::Cnn1dLstm | ArchKind::Cnn1dBilstm)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "1dcnn" | "cnn1d" => ArchKind::Cnn1d,
            "lstm" => ArchKind::Lstm,
            "bilstm" => ArchKind::Bilstm,
            "1dcnn-lstm" | "cnn1d_lstm" => ArchKind::Cnn1dLstm,
            "1dcnn-bilstm" | "cnn1d_bilstm" => ArchKind::Cnn1dBilstm,
            other => {
                return Err(Error::invalid(format!(
                    "unknown architecture `{other}` (expected 1dcnn, lstm, bilstm, 1dcnn-lstm or 1dcnn-bilstm)"
                )))
            }
        })
    }
}

/// Where pooling sits in the four-convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPattern {
    /// conv, conv, pool, conv, conv
    Middle,
    /// conv, pool after every convolution
    AfterEach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub kind: ArchKind,
    /// Filters in the first two convolutions.
    pub filters_early: usize,
    /// Filters in the last two convolutions.
    pub filters_late: usize,
    pub kernel: usize,
    pub lstm_units: usize,
    pub pool: usize,
    pub pool_pattern: PoolPattern,
}

impl EncoderArch {
    pub fn new(kind: ArchKind) -> Self {
        EncoderArch {
            kind,
            filters_early: 100,
            filters_late: 160,
            kernel: 10,
            lstm_units: 256,
            pool: 2,
            pool_pattern: PoolPattern::Middle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("filters_early", self.filters_early),
            ("filters_late", self.filters_late),
            ("kernel", self.kernel),
            ("lstm_units", self.lstm_units),
            ("pool", self.pool),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Layer stack for `channels` input channels.
    pub fn layer_specs(&self, channels: usize) -> Vec<LayerSpec> {
        let conv = |i, o| LayerSpec::Conv1d {
            in_channels: i,
            filters: o,
            kernel: self.kernel,
        };
        let pool = LayerSpec::MaxPool1d { pool: self.pool };
        let (n1, n2) = (self.filters_early, self.filters_late);
        let mut specs = Vec::new();
        let mut feature_channels = channels;
        if self.kind.has_convs() {
            specs.extend([conv(channels, n1), LayerSpec::Relu]);
            if self.pool_pattern == PoolPattern::AfterEach {
                specs.push(pool.clone());
            }
            specs.extend([conv(n1, n1), LayerSpec::Relu, pool.clone()]);
            feature_channels = n1;
        }
        match self.kind {
            ArchKind::Cnn1d => {
                specs.extend([conv(n1, n2), LayerSpec::Relu]);
                if self.pool_pattern == PoolPattern::AfterEach {
                    specs.push(pool.clone());
                }
                specs.extend([conv(n2, n2), LayerSpec::Relu]);
                if self.pool_pattern == PoolPattern::AfterEach {
                    specs.push(pool);
                }
                specs.push(LayerSpec::Gap);
            }
            ArchKind::Lstm | ArchKind::Cnn1dLstm => specs.push(LayerSpec::Lstm {
                inputs: feature_channels,
                units: self.lstm_units,
            }),
            ArchKind::Bilstm | ArchKind::Cnn1dBilstm => specs.push(LayerSpec::Bilstm {
                inputs: feature_channels,
                units: self.lstm_units,
            }),
        }
        specs
    }

    /// Representation width `D_E`.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            ArchKind::Cnn1d => self.filters_late,
            ArchKind::Lstm | ArchKind::Cnn1dLstm => self.lstm_units,
            ArchKind::Bilstm | ArchKind::Cnn1dBilstm => 2 * self.lstm_units,
        }
    }
}

/// Builds the encoder for a `[channels, length]` input and returns it with
/// its output width.
pub fn build_encoder<T: Scalar>(arch: &EncoderArch, input_shape: [usize; 2], rng: &mut Rng) -> Result<(Sequential<T>, usize)> {
    arch.validate()?;
    let encoder = Sequential::build(&arch.layer_specs(input_shape[0]), rng)?;
    check_lengths(&encoder, input_shape)?;
    Ok((encoder, arch.output_dim()))
}

fn check_lengths<T: Scalar>(encoder: &Sequential<T>, input_shape: [usize; 2]) -> Result<()> {
    let mut trace = vec![input_shape[1].to_string()];
    let mut shape = input_shape.to_vec();
    for layer in &encoder.layers {
        match layer.output_shape(&shape) {
            Ok(next) => {
                if next.len() == 2 && next[1] != shape[1] {
                    trace.push(next[1].to_string());
                }
                if next.len() == 1 && shape.len() == 2 {
                    trace.push(layer.spec().kind().to_uppercase());
                }
                shape = next;
            }
            Err(e) => {
                trace.push(format!("{} fails ({e})", layer.spec().kind()));
                return Err(Error::EncoderTooShort {
                    input: input_shape[1],
                    trace: trace.join(" -> "),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn1d_length_trace() {
        let arch = EncoderArch::new(ArchKind::Cnn1d);
        let mut rng = Rng::new(0, 0);
        let (enc, de) = build_encoder::<f32>(&arch, [6, 155], &mut rng).unwrap();
        assert_eq!(de, 160);
        let lengths: Vec<usize> = enc
            .shape_trace(&[6, 155])
            .unwrap()
            .iter()
            .filter(|s| s.len() == 2)
            .map(|s| s[1])
            .collect();
        let mut distinct = lengths.clone();
        distinct.dedup();
        assert_eq!(distinct, [155, 146, 137, 68, 59, 50]);
        assert_eq!(enc.shape_trace(&[6, 155]).unwrap().last().unwrap(), &vec![160]);
    }

    #[test]
    fn output_widths() {
        for (kind, de) in [
            (ArchKind::Cnn1d, 160),
            (ArchKind::Lstm, 256),
            (ArchKind::Bilstm, 512),
            (ArchKind::Cnn1dLstm, 256),
            (ArchKind::Cnn1dBilstm, 512),
        ] {
            let arch = EncoderArch::new(kind);
            let mut rng = Rng::new(0, 0);
            let (enc, d) = build_encoder::<f32>(&arch, [6, 155], &mut rng).unwrap();
            assert_eq!(d, de);
            assert_eq!(enc.shape_trace(&[6, 155]).unwrap().last().unwrap(), &vec![de]);
        }
    }

    #[test]
    fn too_short_input_reports_trace() {
        let arch = EncoderArch::new(ArchKind::Cnn1d);
        let mut rng = Rng::new(0, 0);
        let err = build_encoder::<f32>(&arch, [6, 30], &mut rng).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("30 -> 21 -> 12 -> 6"), "{msg}");
    }

    #[test]
    fn pool_after_each_fits_155() {
        let arch = EncoderArch {
            pool_pattern: PoolPattern::AfterEach,
            ..EncoderArch::new(ArchKind::Cnn1d)
        };
        let mut rng = Rng::new(0, 0);
        assert!(build_encoder::<f32>(&arch, [6, 155], &mut rng).is_ok());
    }

    #[test]
    fn arch_names_parse() {
        for k in ArchKind::ALL {
            assert_eq!(k.tag().parse::<ArchKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.tag()));
        }
        assert_eq!("cnn1d_bilstm".parse::<ArchKind>().unwrap(), ArchKind::Cnn1dBilstm);
        assert!("transformer".parse::<ArchKind>().is_err());
    }
}
