//! Training regimes, optimisation, evaluation and cross-validation.

mod metrics;
mod optim;
mod run;

use serde::{Deserialize, Serialize};

pub use metrics::{argmax, Metrics};
pub use optim::Adam;
pub use run::{
    cross_validate, evaluate_examples, evaluate_model, fit, run_id, train_model, CrossValidation, EpochLog,
    FoldFailure, RunConfig, RunRecord, RunRegistry, TrainOptions,
};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Fine-tuning from pretrained weights: 70 epochs, drops at 30 and 60.
    #[serde(alias = "pretrained")]
    Pretrained70,
    /// Training from scratch: 450 epochs, drops at 300 and 350.
    #[serde(alias = "scratch")]
    Scratch450,
    /// Anything else (smoke runs, tests).
    Custom,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pretrained70" | "pretrained" => Ok(Regime::Pretrained70),
            "scratch450" | "scratch" => Ok(Regime::Scratch450),
            "custom" => Ok(Regime::Custom),
            _ => Err(Error::Config(format!(
                "unknown regime `{s}` (expected pretrained70, scratch450 or custom)"
            ))),
        }
    }
}

impl TrainConfig {
    /// Preset schedule of `regime`; `Custom` keeps a constant rate for
    /// `epochs`.
    pub fn for_regime(regime: Regime, epochs: usize, seed: u64) -> Self {
        match regime {
            Regime::Pretrained70 => Self::pretrained_70(seed),
            Regime::Scratch450 => Self::scratch_450(seed),
            Regime::Custom => Self::custom(epochs, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// L2 penalty added to the gradient before the moment estimates.
    #[default]
    Coupled,
    /// Decay applied directly to the weights, outside the moments.
    Decoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub base_lr: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub weight_decay_mode: WeightDecay,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub seed: u64,
    /// Feed augmented records of the training split.
    #[serde(default = "yes")]
    pub include_augmented: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    fn base(regime: Regime, epochs: usize, drops: Vec<usize>, seed: u64) -> Self {
        Self {
            regime,
            base_lr: 1e-4,
            weight_decay: 1e-3,
            weight_decay_mode: WeightDecay::Coupled,
            batch_size: 32,
            epochs,
            lr_drop_epochs: drops,
            drop_factor: 10.0,
            seed,
            include_augmented: true,
        }
    }

    pub fn pretrained_70(seed: u64) -> Self {
        Self::base(Regime::Pretrained70, 70, vec![30, 60], seed)
    }

    pub fn scratch_450(seed: u64) -> Self {
        Self::base(Regime::Scratch450, 450, vec![300, 350], seed)
    }

    /// Constant learning rate for `epochs` epochs.
    pub fn custom(epochs: usize, seed: u64) -> Self {
        Self::base(Regime::Custom, epochs, Vec::new(), seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be finite and non-negative, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and non-negative, got {}", self.weight_decay));
        }
        if !(self.drop_factor >= 1.0 && self.drop_factor.is_finite()) {
            return bad(format!("drop_factor must be >= 1, got {}", self.drop_factor));
        }
        if self.lr_drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_drop_epochs must be strictly increasing: {:?}", self.lr_drop_epochs));
        }
        if let Some(&last) = self.lr_drop_epochs.last() {
            if last >= self.epochs {
                return bad(format!("lr drop at epoch {last} is not before the last epoch ({})", self.epochs));
            }
        }
        Ok(())
    }
}

/// `base_lr / drop_factor^k` where `k` counts drop epochs `<= epoch`.
pub fn scheduled_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = cfg.lr_drop_epochs.iter().filter(|&&d| d <= epoch).count();
    cfg.base_lr / cfg.drop_factor.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_match_regimes() {
        let p = TrainConfig::pretrained_70(0);
        assert_eq!(scheduled_lr(0, &p), 1e-4);
        assert_eq!(scheduled_lr(29, &p), 1e-4);
        assert_eq!(scheduled_lr(30, &p), 1e-5);
        assert_eq!(scheduled_lr(59, &p), 1e-5);
        assert_eq!(scheduled_lr(60, &p), 1e-6);
        assert_eq!(scheduled_lr(69, &p), 1e-6);
        let s = TrainConfig::scratch_450(0);
        assert_eq!(scheduled_lr(299, &s), 1e-4);
        assert_eq!(scheduled_lr(300, &s), 1e-5);
        assert_eq!(scheduled_lr(349, &s), 1e-5);
        assert_eq!(scheduled_lr(350, &s), 1e-6);
    }

    #[test]
    fn validation_rejects_bad_drops() {
        let mut c = TrainConfig::pretrained_70(0);
        c.lr_drop_epochs = vec![60, 30];
        assert!(c.validate().is_err());
        c.lr_drop_epochs = vec![30, 70];
        assert!(c.validate().is_err());
        assert!(TrainConfig::scratch_450(1).validate().is_ok());
    }
}
