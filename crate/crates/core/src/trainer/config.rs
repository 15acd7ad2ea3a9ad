use serde::{Deserialize, Serialize};

use crate::encoder::TwoStreamConfig;
use crate::error::{Error, Result};
use crate::eval::Direction;
use crate::losses::{LossConfig, LossVariant, Reduction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Identities per batch.
    pub p: usize,
    /// Images per identity per modality.
    pub k: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub base_lr: f64,
    pub variant: LossVariant,
    pub loss: LossConfig,
    pub model: TwoStreamConfig,
    pub seed: u64,
    /// Fraction of identities held out for validation and testing.
    pub holdout: f64,
    /// Validate every this many epochs; 0 disables per-epoch validation.
    pub eval_every: usize,
    pub direction: Direction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 8,
            k: 4,
            epochs: 30,
            momentum: 0.9,
            base_lr: 0.1,
            variant: LossVariant::HcTri,
            loss: LossConfig {
                reduction: Reduction::Mean,
                ..LossConfig::default()
            },
            model: TwoStreamConfig::default(),
            seed: 0,
            holdout: 0.2,
            eval_every: 1,
            direction: Direction::T2v,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.p < 2 {
            return Err(Error::config(format!("P = {} leaves no negatives; need P >= 2", self.p)));
        }
        if self.k == 0 {
            return Err(Error::config("K must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr {} must be finite and >= 0", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config(format!("holdout {} must lie in [0, 1)", self.holdout)));
        }
        self.loss.validate()?;
        self.model.validate()?;
        if self.loss.num_classes != self.model.num_classes {
            return Err(Error::config(format!(
                "loss expects {} classes, model has {}",
                self.loss.num_classes, self.model.num_classes
            )));
        }
        Ok(())
    }

    /// Sets the classifier width of both the model and the loss.
    pub fn with_num_classes(mut self, n: usize) -> Self {
        self.model.num_classes = n;
        self.loss.num_classes = n;
        self
    }
}
