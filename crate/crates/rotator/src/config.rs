//! Run configuration: a JSON document with regime-dependent defaults.
//!
//! Unknown keys are rejected; every field left out of the document is filled
//! from the defaults below and reported in the resolution log so a run's
//! echoed config is complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GeometryMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{AdamConfig, CurriculumStage, StageInit};

/// Reference learning rates: fresh stages and fine-tune stages.
pub const LR_FRESH: f32 = 1e-4;
pub const LR_FINETUNE: f32 = 1e-5;

/// Reference epoch budgets at paper scale (fresh, fine-tune): arc-regime
/// models trained 400/10, wrap-regime models 500/50. Desk-scale runs default
/// to much smaller budgets that exercise the same machinery in minutes.
pub const PAPER_EPOCHS_ARC: (usize, usize) = (400, 10);
pub const PAPER_EPOCHS_WRAP: (usize, usize) = (500, 50);
pub const DESK_EPOCHS: (usize, usize) = (30, 10);

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub regime: GeometryMode,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub batch_size: usize,
    /// Tradeoff weight on the mask prediction loss.
    pub mask_weight: f32,
    pub lr_fresh: f32,
    pub lr_finetune: f32,
    pub adam: AdamConfig,
    pub epochs_fresh: usize,
    pub epochs_finetune: usize,
    /// 1 = single-threaded; 0 = all cores.
    pub threads: usize,
    pub heldout_count: usize,
    pub model: ModelConfig,
    pub stages: Vec<CurriculumStage>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    regime: Option<GeometryMode>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    batch_size: Option<usize>,
    mask_weight: Option<f32>,
    lr_fresh: Option<f32>,
    lr_finetune: Option<f32>,
    adam: Option<AdamConfig>,
    epochs_fresh: Option<usize>,
    epochs_finetune: Option<usize>,
    threads: Option<usize>,
    heldout_count: Option<usize>,
    model: Option<ModelConfig>,
    stages: Option<Vec<CurriculumStage>>,
}

/// The curriculum schedule for a regime: T = 1, 2, 4, 6 on arcs (bounded
/// view range) and T = 1, 2, 4, 8, 16 on full turntables.
pub fn default_schedule(
    regime: GeometryMode,
    lr_fresh: f32,
    lr_finetune: f32,
    epochs_fresh: usize,
    epochs_finetune: usize,
) -> Vec<CurriculumStage> {
    let lengths: &[usize] = match regime {
        GeometryMode::Arc => &[1, 2, 4, 6],
        GeometryMode::Wrap => &[1, 2, 4, 8, 16],
    };
    lengths
        .iter()
        .enumerate()
        .map(|(i, &t)| CurriculumStage {
            name: format!("RNN{t}"),
            t,
            epochs: if i == 0 { epochs_fresh } else { epochs_finetune },
            lr: if i == 0 { lr_fresh } else { lr_finetune },
            init: if i == 0 {
                StageInit::Fresh
            } else {
                StageInit::PreviousStage
            },
        })
        .collect()
}

impl RunConfig {
    pub fn default_for(regime: GeometryMode) -> Self {
        let model = match regime {
            GeometryMode::Arc => ModelConfig::faces(),
            GeometryMode::Wrap => ModelConfig::chairs(),
        };
        let (epochs_fresh, epochs_finetune) = DESK_EPOCHS;
        RunConfig {
            regime,
            data: None,
            out: None,
            seed: 7,
            batch_size: 32,
            mask_weight: 0.1,
            lr_fresh: LR_FRESH,
            lr_finetune: LR_FINETUNE,
            adam: AdamConfig::default(),
            epochs_fresh,
            epochs_finetune,
            threads: 0,
            heldout_count: 64,
            model,
            stages: default_schedule(regime, LR_FRESH, LR_FINETUNE, epochs_fresh, epochs_finetune),
        }
    }

    /// Parses a JSON document, applying defaults for absent keys. The second
    /// element lists the keys that were defaulted, for the provenance echo.
    pub fn from_json(text: &str) -> Result<(Self, Vec<&'static str>)> {
        let raw: RawRunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_file(path: &Path) -> Result<(Self, Vec<&'static str>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawRunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawRunConfig) -> Result<(Self, Vec<&'static str>)> {
        let mut defaulted = Vec::new();
        let regime = match raw.regime {
            Some(r) => r,
            None => {
                defaulted.push("regime");
                GeometryMode::Wrap
            }
        };
        let base = RunConfig::default_for(regime);

        macro_rules! pick {
            ($field:ident) => {
                match raw.$field {
                    Some(v) => v,
                    None => {
                        defaulted.push(stringify!($field));
                        base.$field
                    }
                }
            };
        }

        let seed = pick!(seed);
        let batch_size = pick!(batch_size);
        let mask_weight = pick!(mask_weight);
        let lr_fresh = pick!(lr_fresh);
        let lr_finetune = pick!(lr_finetune);
        let adam = pick!(adam);
        let epochs_fresh = pick!(epochs_fresh);
        let epochs_finetune = pick!(epochs_finetune);
        let threads = pick!(threads);
        let heldout_count = pick!(heldout_count);
        let model = pick!(model);
        let stages = match raw.stages {
            Some(s) => s,
            None => {
                defaulted.push("stages");
                default_schedule(regime, lr_fresh, lr_finetune, epochs_fresh, epochs_finetune)
            }
        };

        let cfg = RunConfig {
            regime,
            data: raw.data,
            out: raw.out,
            seed,
            batch_size,
            mask_weight,
            lr_fresh,
            lr_finetune,
            adam,
            epochs_fresh,
            epochs_finetune,
            threads,
            heldout_count,
            model,
            stages,
        };
        cfg.validate()?;
        Ok((cfg, defaulted))
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_weight < 0.0 {
            return Err(Error::config(format!(
                "mask_weight must be non-negative, got {}",
                self.mask_weight
            )));
        }
        if self.lr_fresh <= 0.0 || self.lr_finetune <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.adam.beta1 > 0.0 && self.adam.beta1 < 1.0)
            || !(self.adam.beta2 > 0.0 && self.adam.beta2 < 1.0)
            || self.adam.epsilon <= 0.0
        {
            return Err(Error::config("adam parameters out of range"));
        }
        self.model.validate()?;
        crate::train::validate_stages(&self.stages)?;
        Ok(())
    }

    pub fn train_opts(&self) -> crate::train::TrainOpts {
        crate::train::TrainOpts {
            batch_size: self.batch_size,
            lambda: self.mask_weight,
            adam: self.adam,
            seed: self.seed,
            threads: self.threads,
            heldout_count: self.heldout_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_yields_full_defaults() {
        let (cfg, defaulted) = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.regime, GeometryMode::Wrap);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mask_weight, 0.1);
        assert_eq!(cfg.lr_fresh, 1e-4);
        assert_eq!(cfg.lr_finetune, 1e-5);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.stages.len(), 5); // wrap schedule 1,2,4,8,16
        assert_eq!(cfg.stages[4].t, 16);
        assert!(defaulted.contains(&"regime"));
        assert!(defaulted.contains(&"mask_weight"));
        // the echo is serializable
        serde_json::to_string(&cfg).unwrap();
    }

    #[test]
    fn arc_regime_defaults_to_the_shorter_schedule() {
        let (cfg, _) = RunConfig::from_json(r#"{"regime": "arc"}"#).unwrap();
        let ts: Vec<usize> = cfg.stages.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![1, 2, 4, 6]);
        assert_eq!(cfg.stages[0].name, "RNN1");
        assert_eq!(cfg.stages[0].lr, LR_FRESH);
        assert_eq!(cfg.stages[1].lr, LR_FINETUNE);
        assert_eq!(cfg.model.conv_channels, vec![64, 128]);
    }

    #[test]
    fn negative_mask_weight_is_a_validation_error() {
        let err = RunConfig::from_json(r#"{"mask_weight": -1.0}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("mask_weight"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"sneaky": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn explicit_fields_are_not_reported_as_defaulted() {
        let (cfg, defaulted) = RunConfig::from_json(r#"{"seed": 99, "batch_size": 4}"#).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.batch_size, 4);
        assert!(!defaulted.contains(&"seed"));
        assert!(!defaulted.contains(&"batch_size"));
        assert!(defaulted.contains(&"lr_fresh"));
    }

    #[test]
    fn custom_stage_lists_are_validated() {
        let bad = r#"{"stages": [
            {"name": "A", "t": 2, "epochs": 1, "lr": 0.001, "init": "fresh"},
            {"name": "B", "t": 2, "epochs": 1, "lr": 0.001, "init": "previous_stage"}
        ]}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let good = r#"{"stages": [
            {"name": "A", "t": 1, "epochs": 1, "lr": 0.001, "init": "fresh"},
            {"name": "B", "t": 3, "epochs": 1, "lr": 0.0001, "init": "previous_stage"}
        ]}"#;
        let (cfg, _) = RunConfig::from_json(good).unwrap();
        assert_eq!(cfg.stages.len(), 2);
    }
}
