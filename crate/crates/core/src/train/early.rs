use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs in which the validation loss
/// did not drop more than `min_delta` below the best so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self::with_min_delta(patience, 0.0)
    }

    pub fn with_min_delta(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            min_delta: min_delta.max(0.0),
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Result<Verdict> {
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        if self.best.is_none_or(|(_, b)| val_loss < b - self.min_delta) {
            self.best = Some((epoch, val_loss));
            self.bad_epochs = 0;
            return Ok(Verdict::Improved);
        }
        self.bad_epochs += 1;
        Ok(if self.bad_epochs >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        })
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}
