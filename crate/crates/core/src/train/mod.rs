//! Optimizer, early stopping, the two-stage protocol and the
//! cross-entropy baseline, fine-tuning, LOSO orchestration and reports.

mod adam;
mod early;
mod eval;
mod loso;
mod stages;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchKind, EncoderArch, ModelConfig, PoolPattern};

pub use adam::AdamState;
pub use early::{EarlyStopping, Verdict};
pub use eval::{
    confusion_csv, evaluate, export_embeddings, top_confusions, ConfusionMatrix, ConfusionPair, EvalReport,
};
pub use loso::{finetune_loso, fold_seed, loso_run, FoldOutcome, LosoOutcome, TransferOutcome};
pub use stages::{finetune, train_ce, train_pipeline, train_stage1, train_stage2, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Scl,
    Ce,
}

impl LossMode {
    pub fn tag(self) -> &'static str {
        match self {
            LossMode::Scl => "scl",
            LossMode::Ce => "ce",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scl" | "supcon" => Ok(LossMode::Scl),
            "ce" => Ok(LossMode::Ce),
            other => Err(Error::invalid(format!("unknown loss `{other}` (expected scl or ce)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub arch: ArchKind,
    pub tau: f64,
    pub proj_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Smallest validation-loss drop that counts as an improvement.
    pub min_delta: f64,
    pub val_ratio: f64,
    pub seed: u64,
    pub normalize_r: bool,
    pub normalize_z: bool,
    pub classifier_dropout: f64,
    pub pool_pattern: PoolPattern,
    /// Restore the best-validation weights when training ends.
    pub restore_best: bool,
    /// Fine-tuning keeps the source classifier instead of re-initialising it.
    pub warm_start_head: bool,
    /// Round-robin over classes when forming batches.
    pub balanced_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::Scl,
            arch: ArchKind::Cnn1d,
            tau: 0.1,
            proj_dim: 128,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            min_delta: 1e-4,
            val_ratio: 0.2,
            seed: 42,
            normalize_r: true,
            normalize_z: true,
            classifier_dropout: 0.5,
            pool_pattern: PoolPattern::Middle,
            restore_best: true,
            warm_start_head: false,
            balanced_batches: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return bad(format!("val_ratio must lie in (0, 1), got {}", self.val_ratio));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 || (self.loss_mode == LossMode::Scl && self.batch_size < 2) {
            return bad(format!("batch_size {} too small for {}", self.batch_size, self.loss_mode.tag()));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad(format!("min_delta must be non-negative, got {}", self.min_delta));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.proj_dim == 0 {
            return bad("proj_dim must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.classifier_dropout) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.classifier_dropout));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.arch);
        m.arch = EncoderArch {
            pool_pattern: self.pool_pattern,
            ..EncoderArch::new(self.arch)
        };
        m.proj_dim = self.proj_dim;
        m.classifier_dropout = self.classifier_dropout;
        m.normalize_r = self.normalize_r;
        m.normalize_z = self.normalize_z;
        m
    }

    /// Fraction of each class kept for training.
    pub fn train_ratio(&self) -> f64 {
        1.0 - self.val_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
    pub skipped_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHistory {
    /// `stage1`, `stage2`, `ce` or `finetune`.
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl StageHistory {
    pub fn skipped_anchors(&self) -> usize {
        self.epochs.iter().map(|e| e.skipped_anchors).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub stages: Vec<StageHistory>,
}

impl History {
    pub fn skipped_anchors(&self) -> usize {
        self.stages.iter().map(StageHistory::skipped_anchors).sum()
    }

    pub fn last(&self) -> Option<&StageHistory> {
        self.stages.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        let bad = [
            TrainConfig { tau: 0.0, ..Default::default() },
            TrainConfig { val_ratio: 1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let ce = TrainConfig {
            loss_mode: LossMode::Ce,
            batch_size: 1,
            ..Default::default()
        };
        ce.validate().unwrap();
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"tau\":0.1") && s.contains("\"batch_size\":32") && s.contains("\"patience\":5"));
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
