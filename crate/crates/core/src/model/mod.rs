//! Encoder architectures, projection and classifier heads, and the model
//! bundle that ties them together.

mod arch;
pub mod checkpoint;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CHANNELS, SAMPLE_LENGTH};
use crate::error::{Error, Result};
use crate::layers::{L2Norm, Layer, LayerSpec, Mode, Sequential};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::{softmax_stable, Tensor};
use crate::NUM_CLASSES;

pub use arch::{build_encoder, ArchKind, EncoderArch, PoolPattern};
pub use checkpoint::{load_checkpoint, save_checkpoint};

/// Guard used when normalizing `r` and `z`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: EncoderArch,
    pub input_shape: [usize; 2],
    /// Projection width `D_P`.
    pub proj_dim: usize,
    pub classifier_dropout: f64,
    /// L2-normalize the encoder output before the heads.
    pub normalize_r: bool,
    /// L2-normalize the projection output before the loss.
    pub normalize_z: bool,
}

impl ModelConfig {
    pub fn new(kind: ArchKind) -> Self {
        ModelConfig {
            arch: EncoderArch::new(kind),
            input_shape: [CHANNELS, SAMPLE_LENGTH],
            proj_dim: 128,
            classifier_dropout: 0.5,
            normalize_r: true,
            normalize_z: true,
        }
    }

    /// Weights and biases of the projection head.
    pub fn projection_param_count(&self) -> usize {
        (self.arch.output_dim() + 1) * self.proj_dim
    }

    fn projection_specs(&self) -> Vec<LayerSpec> {
        let mut specs = vec![
            LayerSpec::Dense {
                inputs: self.arch.output_dim(),
                units: self.proj_dim,
            },
            LayerSpec::Relu,
        ];
        if self.normalize_z {
            specs.push(LayerSpec::L2norm { eps: NORM_EPS });
        }
        specs
    }

    fn classifier_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dropout {
                rate: self.classifier_dropout,
            },
            LayerSpec::Dense {
                inputs: self.arch.output_dim(),
                units: NUM_CLASSES,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Encoder plus projection head, trained with the contrastive loss.
    Stage1,
    /// Encoder plus classifier; what inference uses.
    Inference,
}

/// Which parameters [`ModelBundle::param_count`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountForm {
    Inference,
    Stage1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_name: String,
    /// `scl` or `ce`.
    pub loss_mode: String,
    pub stage: Stage,
    pub classifier_trained: bool,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub config: ModelConfig,
    pub encoder: Sequential<T>,
    pub projection: Option<Sequential<T>>,
    pub classifier: Sequential<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> ModelBundle<T> {
    /// Fresh bundle; with `with_projection` it is in stage-1 form.
    pub fn build(config: ModelConfig, with_projection: bool, seed: u64) -> Result<Self> {
        let mut rng = Rng::keyed(seed, Stream::Init, &[0]);
        let (encoder, _) = build_encoder(&config.arch, config.input_shape, &mut rng)?;
        let projection = if with_projection {
            let mut prng = Rng::keyed(seed, Stream::Init, &[1]);
            Some(Sequential::build(&config.projection_specs(), &mut prng)?)
        } else {
            None
        };
        let classifier = Self::fresh_classifier(&config, seed, 0)?;
        Ok(ModelBundle {
            provenance: Provenance {
                seed,
                dataset_name: String::new(),
                loss_mode: if with_projection { "scl" } else { "ce" }.into(),
                stage: if with_projection {
                    Stage::Stage1
                } else {
                    Stage::Inference
                },
                classifier_trained: false,
                version: crate::VERSION.into(),
            },
            config,
            encoder,
            projection,
            classifier,
        })
    }

    /// Classifier head initialised from `(seed, round)`.
    pub fn fresh_classifier(config: &ModelConfig, seed: u64, round: u64) -> Result<Sequential<T>> {
        let mut rng = Rng::keyed(seed, Stream::HeadInit, &[round]);
        Sequential::build(&config.classifier_specs(), &mut rng)
    }

    pub fn stage(&self) -> Stage {
        if self.projection.is_some() {
            Stage::Stage1
        } else {
            Stage::Inference
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.arch.output_dim()
    }

    pub(crate) fn r_norm(&self) -> Option<L2Norm> {
        self.config.normalize_r.then_some(L2Norm { eps: NORM_EPS })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: x.shape().to_vec(),
                right: self.config.input_shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Encoder forward followed by L2 normalization (unless disabled).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let r = self.encoder.infer(x)?;
        Ok(match self.r_norm() {
            Some(n) => n.forward(&r).0,
            None => r,
        })
    }

    /// Projection head output `z`.
    pub fn project(&self, r: &Tensor<T>) -> Result<Tensor<T>> {
        let proj = self
            .projection
            .as_ref()
            .ok_or_else(|| Error::invalid("project: bundle has no projection head (inference form)"))?;
        proj.infer(r)
    }

    /// Class probabilities. Training mode applies dropout to `r` first.
    pub fn classify(&self, r: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let logits = match mode {
            Mode::Infer => self.classifier.infer(r)?,
            Mode::Train => self.classifier.forward(r, mode, rng)?.0,
        };
        softmax_stable(&logits)
    }

    /// Argmax class in inference mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<usize> {
        let r = self.encode(x)?;
        let p = self.classify(&r, Mode::Infer, &mut Rng::new(0, 0))?;
        Ok(p.argmax().expect("26 classes"))
    }

    pub fn encoder_params(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn projection_params(&self) -> usize {
        self.projection.as_ref().map_or(0, Sequential::param_count)
    }

    pub fn classifier_params(&self) -> usize {
        self.classifier.param_count()
    }

    pub fn param_count(&self, form: CountForm) -> usize {
        let base = self.encoder_params() + self.classifier_params();
        match form {
            CountForm::Inference => base,
            CountForm::Stage1 => base + self.projection_params(),
        }
    }

    /// Drops the projection head, leaving the encoder untouched.
    pub fn discard_projection(mut self) -> Self {
        if self.projection.take().is_none() {
            warn!("discard_projection: bundle has no projection head; nothing to do");
        }
        self.provenance.stage = Stage::Inference;
        self
    }

    /// SHA-256 over encoder shapes and values (as f64 bit patterns).
    pub fn encoder_digest(&self) -> String {
        digest_params(&self.encoder)
    }

    /// Replaces the classifier with a freshly initialised head.
    pub fn reset_classifier(&mut self, seed: u64, round: u64) -> Result<()> {
        self.classifier = Self::fresh_classifier(&self.config, seed, round)?;
        self.provenance.classifier_trained = false;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            encoder: cast_seq(&self.encoder),
            projection: self.projection.as_ref().map(cast_seq),
            classifier: cast_seq(&self.classifier),
            provenance: self.provenance.clone(),
        }
    }
}

pub(crate) fn digest_params<T: Scalar>(seq: &Sequential<T>) -> String {
    let mut h = Sha256::new();
    for p in seq.params() {
        for &d in p.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in p.data() {
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn cast_seq<T: Scalar, U: Scalar>(seq: &Sequential<T>) -> Sequential<U> {
    let mut rng = Rng::new(0, 0);
    let layers = seq
        .layers
        .iter()
        .map(|l| {
            let mut out = Layer::<U>::build(&l.spec(), &mut rng).expect("spec came from a valid layer");
            for (dst, src) in out.params_mut().into_iter().zip(l.params()) {
                *dst = src.cast();
            }
            out
        })
        .collect();
    Sequential::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed, 0);
        Tensor::from_fn(vec![6, 155], |_| rng.normal() as f32)
    }

    #[test]
    fn cnn1d_parameter_counts() {
        let scl = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1d), true, 0).unwrap();
        // 6100 + 100100 + 160160 + 256160 + (160*26 + 26)
        assert_eq!(scl.param_count(CountForm::Inference), 526_706);
        assert_eq!(scl.param_count(CountForm::Stage1) - scl.param_count(CountForm::Inference), 20_608);
        assert_eq!(scl.config.projection_param_count(), 20_608);
        let inference = scl.clone().discard_projection();
        assert_eq!(inference.param_count(CountForm::Inference), 526_706);
        assert_eq!(inference.param_count(CountForm::Stage1), 526_706);
    }

    #[test]
    fn ce_and_scl_inference_counts_agree() {
        for kind in ArchKind::ALL {
            let scl = ModelBundle::<f32>::build(ModelConfig::new(kind), true, 1).unwrap();
            let ce = ModelBundle::<f32>::build(ModelConfig::new(kind), false, 1).unwrap();
            assert_eq!(
                scl.discard_projection().param_count(CountForm::Inference),
                ce.param_count(CountForm::Inference)
            );
        }
    }

    #[test]
    fn encode_is_unit_norm_and_deterministic() {
        let b = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1d), true, 3).unwrap();
        let r = b.encode(&input(1)).unwrap();
        assert_eq!(r.len(), 160);
        assert!((r.norm() - 1.0).abs() < 1e-5);
        assert_eq!(r, b.encode(&input(1)).unwrap());
        let z = b.project(&r).unwrap();
        assert_eq!(z.len(), 128);
        assert!((z.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_input_gives_finite_r() {
        let mut b = ModelBundle::<f64>::build(ModelConfig::new(ArchKind::Cnn1d), false, 3).unwrap();
        for p in b.encoder.params_mut() {
            p.fill_zero();
        }
        let r = b.encode(&Tensor::zeros(vec![6, 155])).unwrap();
        assert!(r.all_finite());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1dLstm), true, 9).unwrap();
        let b = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1dLstm), true, 9).unwrap();
        assert_eq!(a, b);
        let c = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1dLstm), true, 10).unwrap();
        assert_ne!(a.encoder_digest(), c.encoder_digest());
    }

    #[test]
    fn project_requires_stage1() {
        let b = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Lstm), false, 0).unwrap();
        assert!(b.project(&Tensor::zeros(vec![256])).is_err());
    }

    #[test]
    fn identity_projection_passes_nonnegative_r() {
        let mut cfg = ModelConfig::new(ArchKind::Cnn1d);
        cfg.proj_dim = 160;
        let mut b = ModelBundle::<f64>::build(cfg, true, 0).unwrap();
        let proj = b.projection.as_mut().unwrap();
        let params = proj.params_mut();
        let [w, bias] = <[_; 2]>::try_from(params).ok().unwrap();
        *w = Tensor::identity(160);
        bias.fill_zero();
        let r = crate::tensor::l2_normalize(&Tensor::from_fn(vec![160], |i| (i % 7) as f64), 1e-12);
        let z = b.project(&r).unwrap();
        for (a, c) in z.data().iter().zip(r.data()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_contracts() {
        let mut b = ModelBundle::<f64>::build(ModelConfig::new(ArchKind::Cnn1d), false, 0).unwrap();
        let r = b.encode(&input(2).cast()).unwrap();
        let mut rng = Rng::new(0, 0);
        let p = b.classify(&r, Mode::Infer, &mut rng).unwrap();
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p, b.classify(&r, Mode::Infer, &mut rng).unwrap());
        let argmax = p.argmax();
        for w in b.classifier.params_mut() {
            w.scale(3.0);
        }
        assert_eq!(b.classify(&r, Mode::Infer, &mut rng).unwrap().argmax(), argmax);
        for w in b.classifier.params_mut() {
            w.fill_zero();
        }
        let u = b.classify(&r, Mode::Infer, &mut rng).unwrap();
        assert!(u.data().iter().all(|&v| (v - 1.0 / 26.0).abs() < 1e-15));
    }

    #[test]
    fn discard_keeps_encoder_bits() {
        let b = ModelBundle::<f32>::build(ModelConfig::new(ArchKind::Cnn1d), true, 5).unwrap();
        let before = b.encoder_digest();
        let enc = b.encoder.clone();
        let after = b.discard_projection();
        assert_eq!(after.encoder_digest(), before);
        assert_eq!(after.encoder, enc);
        assert_eq!(after.stage(), Stage::Inference);
        // second discard is a no-op
        let again = after.clone().discard_projection();
        assert_eq!(again, after);
    }
}
