//! Trainer configuration and the learning-rate schedule.
//!
//! A config file is TOML key/value text whose keys are the field names of
//! [`TrainConfig`]; unknown keys are rejected and missing keys take their
//! defaults. Example:
//!
//! ```toml
//! P = 16
//! K = 8
//! sigma = 0.1
//! epochs = 140
//! warmup_epochs = 20
//! base_lr = 0.1
//! warmup_start_lr = 0.001
//! decay_epochs = [80, 100]
//! decay_factor = 0.1
//! momentum = 0.9
//! deep_supervision = "shared"
//! sft_grad_through_T = true
//! seed = 0
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};

/// Which objective the trainer optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// AM-Softmax on the embeddings; no transform.
    Baseline,
    /// AM-Softmax on the transformed embeddings, plus optional deep
    /// supervision on the original ones.
    Sft,
    /// AM-Softmax on the embeddings plus the supervised multiclass Ncut loss.
    Ncut,
}

/// Supervision on the pre-transform features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepSupervision {
    /// Only the transformed features are classified.
    Off,
    /// Both feature sets go through the same classifier.
    Shared,
    /// The original features get an independent classifier.
    Unshared,
}

macro_rules! str_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = SftError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(SftError::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

str_enum!(Method { "baseline" => Method::Baseline, "sft" => Method::Sft, "ncut" => Method::Ncut });
str_enum!(DeepSupervision {
    "off" => DeepSupervision::Off,
    "shared" => DeepSupervision::Shared,
    "unshared" => DeepSupervision::Unshared,
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Identities per batch.
    #[serde(rename = "P")]
    pub p: usize,
    /// Samples per identity in a batch.
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub warmup_start_lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub deep_supervision: DeepSupervision,
    #[serde(rename = "sft_grad_through_T")]
    pub sft_grad_through_t: bool,
    pub seed: u64,

    pub method: Method,
    /// AM-Softmax additive margin.
    pub margin: f64,
    /// AM-Softmax logit scale.
    pub scale: f64,
    /// Hidden width of the embedding model; 0 means a single affine map.
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Weight of the original-feature loss under deep supervision.
    pub orig_weight: f64,
    /// Weight of the transformed-feature loss.
    pub sft_weight: f64,
    /// Weight of the cross-entropy term in the Ncut objective.
    pub ce_weight: f64,
    /// Weight of the Ncut term in the Ncut objective.
    pub ncut_weight: f64,
    /// Batches per epoch; 0 means `max(1, train_samples / (P·K))`.
    pub batches_per_epoch: usize,
    /// Emit affinity and Ncut diagnostics in the training log.
    pub diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            p: 16,
            k: 8,
            sigma: 0.1,
            epochs: 140,
            warmup_epochs: 20,
            base_lr: 0.1,
            warmup_start_lr: 0.001,
            decay_epochs: vec![80, 100],
            decay_factor: 0.1,
            momentum: 0.9,
            deep_supervision: DeepSupervision::Shared,
            sft_grad_through_t: true,
            seed: 0,
            method: Method::Sft,
            margin: 0.3,
            scale: 15.0,
            hidden_dim: 64,
            embed_dim: 32,
            orig_weight: 1.0,
            sft_weight: 1.0,
            ce_weight: 1.0,
            ncut_weight: 1.0,
            batches_per_epoch: 0,
            diagnostics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SftError::Config(msg));
        if self.p < 2 || self.k < 2 {
            return bad(format!("P and K must be at least 2, got P={} K={}", self.p, self.k));
        }
        let positive = [
            ("sigma", self.sigma),
            ("base_lr", self.base_lr),
            ("warmup_start_lr", self.warmup_start_lr),
            ("decay_factor", self.decay_factor),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        let weights = [
            ("margin", self.margin),
            ("orig_weight", self.orig_weight),
            ("sft_weight", self.sft_weight),
            ("ce_weight", self.ce_weight),
            ("ncut_weight", self.ncut_weight),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_epochs must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| SftError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SftError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Learning rate for `epoch`: linear warmup from `warmup_start_lr` to
/// `base_lr` over `warmup_epochs`, then multiplied by `decay_factor` at each
/// epoch listed in `decay_epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(SftError::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    if epoch < cfg.warmup_epochs {
        let frac = epoch as f64 / cfg.warmup_epochs as f64;
        return Ok(cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * frac);
    }
    let decays = cfg.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    Ok(cfg.base_lr * cfg.decay_factor.powi(decays as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert!((lr_at(0, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_at(20, &cfg).unwrap() - 0.1).abs() < 1e-15);
        assert!((lr_at(10, &cfg).unwrap() - 0.0505).abs() < 1e-15);
        assert!((lr_at(79, &cfg).unwrap() - 0.1).abs() < 1e-15);
        assert!((lr_at(80, &cfg).unwrap() - 0.01).abs() < 1e-15);
        assert!((lr_at(100, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_at(139, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!(matches!(
            lr_at(140, &cfg),
            Err(SftError::EpochOutOfRange {
                epoch: 140,
                epochs: 140
            })
        ));
    }

    #[test]
    fn toml_round_trip_and_keys() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("P = 16"));
        assert!(text.contains("sft_grad_through_T = true"));
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml("K = 4\ndeep_supervision = \"unshared\"\n").unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.deep_supervision, DeepSupervision::Unshared);
        assert_eq!(cfg.p, 16);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::from_toml("batch = 3\n").is_err());
        assert!(TrainConfig::from_toml("P = 1\n").is_err());
        assert!(TrainConfig::from_toml("sigma = 0.0\n").is_err());
        assert!(TrainConfig::from_toml("momentum = 1.0\n").is_err());
    }

    #[test]
    fn enum_names() {
        assert_eq!(
            "unshared".parse::<DeepSupervision>().unwrap(),
            DeepSupervision::Unshared
        );
        assert_eq!(Method::Ncut.to_string(), "ncut");
        assert!("both".parse::<DeepSupervision>().is_err());
    }
}
