//! Deterministic training loop, plateau schedule and evaluation.

mod adam;
mod eval;
mod run;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, is_backbone, OptimizerState};
pub use eval::{evaluate, evaluate_loss, ImagePrediction};
pub use run::{train, TrainOutcome};

use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without improvement before the learning rates decay.
    pub patience: usize,
    /// Minimum absolute drop in epoch loss that counts as improvement.
    pub plateau_tolerance: f64,
    pub lr_decay: f64,
    pub max_epochs: usize,
    /// Seeds initialisation, shuffling and dropout.
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_backbone: 1e-6,
            lr_head: 1e-4,
            weight_decay: 5e-5,
            dropout: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 5,
            plateau_tolerance: 1e-4,
            lr_decay: 0.1,
            max_epochs: 50,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        for (name, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_head", self.lr_head),
            ("adam_eps", self.adam_eps),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name}={v} must be positive")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout={} outside [0, 1)", self.dropout)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name}={b} outside [0, 1)")));
            }
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("patience and max_epochs must be positive"));
        }
        if self.plateau_tolerance.is_nan() || self.plateau_tolerance < 0.0 {
            return Err(Error::invalid("plateau_tolerance must be non-negative"));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub wemd: f64,
    pub atts: f64,
    pub total: f64,
    pub lr_head: f64,
    pub lr_backbone: f64,
}

pub const LOG_HEADER: &str = "epoch\twemd\tatts\ttotal\tlr_head\tlr_backbone";

/// Tab-separated log with a header line and round-trippable floats.
pub fn format_log(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(
            s,
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
            e.epoch, e.wemd, e.atts, e.total, e.lr_head, e.lr_backbone
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_roundtrip() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.lr_backbone, 1e-6);
        assert_eq!(cfg.lr_head, 1e-4);
        assert_eq!(cfg.weight_decay, 5e-5);
        assert_eq!(cfg.dropout, 0.5);
        let back = TrainConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_and_unknown_keys() {
        let cfg = TrainConfig::parse("max_epochs = 3\n[model]\nchannels = 8\nc_prime = 16\n").unwrap();
        assert_eq!(cfg.max_epochs, 3);
        assert_eq!(cfg.model.channels, 8);
        assert_eq!(cfg.loss.lambda, 0.1);
        assert!(TrainConfig::parse("bogus = 1\n").is_err());
        assert!(TrainConfig::parse("batch_size = 0\n").is_err());
        assert!(TrainConfig::parse("lr_head = -1.0\n").is_err());
    }
}
