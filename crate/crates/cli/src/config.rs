//! Pipeline configuration: every stage knob in one file.
//!
//! Loaded from TOML (default) or JSON (`.json` extension). Every field has a
//! default, so an empty file — or no `--config` at all — runs the documented
//! reference pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Where negatives taken from positive images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSource {
    /// Side strips of each foreground estimate.
    Discovered,
    /// Candidate patches with IoU below `neighboring_max_iou` against the
    /// estimate.
    Neighboring,
    /// No negatives from positive images at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// Neighborhood size K; defaults to half the positive-image count.
    pub k: Option<usize>,
    /// Conflict threshold θ; defaults to K/20.
    pub theta: Option<usize>,
    /// IoU at which two neighborhood members count as the same region.
    pub iou_min: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            k: None,
            theta: None,
            iou_min: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigMiningConfig {
    /// Bin widths for (dx, dy, scale ratio, aspect ratio).
    pub transform_widths: [f64; 4],
    /// Cell size of the relative-location grid.
    pub location_cell: f64,
    /// Weight between component size and cluster coverage in the score.
    pub alpha: f64,
    /// Smallest component mined as a configuration.
    pub min_component: usize,
}

impl Default for ConfigMiningConfig {
    fn default() -> Self {
        ConfigMiningConfig {
            transform_widths: [30.0, 30.0, 1.0, 1.0],
            location_cell: 0.5,
            alpha: 0.5,
            min_component: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// L2 regularization strength λ.
    pub lambda: f64,
    /// Subgradient epochs per training run.
    pub epochs: usize,
    /// Mining margin: negatives scoring above −margin are added.
    pub margin: f64,
    /// Cap on negative-mining retraining rounds.
    pub mining_rounds_cap: usize,
    /// Latent rounds T; 1 means a single training with no re-localization.
    pub rounds: usize,
    /// Source of negatives drawn from positive images.
    pub negatives: NegativeSource,
    /// IoU ceiling for the neighboring-negative baseline.
    pub neighboring_max_iou: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 1e-4,
            epochs: 500,
            margin: 1.0,
            mining_rounds_cap: 10,
            rounds: 5,
            negatives: NegativeSource::Discovered,
            neighboring_max_iou: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// IoU threshold for both CorLoc and AP matching.
    pub iou_min: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { iou_min: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Directory holding every stage's default input and output files.
    pub workdir: PathBuf,
    pub discovery: DiscoveryConfig,
    pub configs: ConfigMiningConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            workdir: PathBuf::from("out"),
            discovery: DiscoveryConfig::default(),
            configs: ConfigMiningConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a config file, TOML unless the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Schema(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Schema(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Schema(msg.to_string()))
            }
        };
        check(
            self.discovery.iou_min > 0.0 && self.discovery.iou_min <= 1.0,
            "discovery.iou_min must lie in (0, 1]",
        )?;
        check(
            self.configs.transform_widths.iter().all(|w| *w > 0.0),
            "configs.transform_widths must be positive",
        )?;
        check(
            self.configs.location_cell > 0.0,
            "configs.location_cell must be positive",
        )?;
        check(
            (0.0..=1.0).contains(&self.configs.alpha),
            "configs.alpha must lie in [0, 1]",
        )?;
        check(
            self.configs.min_component >= 2,
            "configs.min_component must be at least 2",
        )?;
        check(self.training.lambda > 0.0, "training.lambda must be positive")?;
        check(self.training.epochs >= 1, "training.epochs must be at least 1")?;
        check(self.training.margin >= 0.0, "training.margin must be non-negative")?;
        check(self.training.rounds >= 1, "training.rounds must be at least 1")?;
        check(
            self.training.neighboring_max_iou > 0.0 && self.training.neighboring_max_iou <= 1.0,
            "training.neighboring_max_iou must lie in (0, 1]",
        )?;
        check(
            self.evaluation.iou_min > 0.0 && self.evaluation.iou_min <= 1.0,
            "evaluation.iou_min must lie in (0, 1]",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn documented_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.discovery.iou_min, 0.5);
        assert_eq!(cfg.configs.transform_widths, [30.0, 30.0, 1.0, 1.0]);
        assert_eq!(cfg.configs.location_cell, 0.5);
        assert_eq!(cfg.configs.alpha, 0.5);
        assert_eq!(cfg.configs.min_component, 3);
        assert_eq!(cfg.training.rounds, 5);
        assert_eq!(cfg.training.negatives, NegativeSource::Discovered);
        assert_eq!(cfg.training.neighboring_max_iou, 0.3);
        assert_eq!(cfg.evaluation.iou_min, 0.5);
    }

    #[test]
    fn sections_override_selectively() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            seed = 3
            [training]
            rounds = 1
            negatives = "neighboring"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.training.rounds, 1);
        assert_eq!(cfg.training.negatives, NegativeSource::Neighboring);
        // Untouched sections keep their defaults.
        assert_eq!(cfg.training.lambda, 1e-4);
        assert_eq!(cfg.configs, ConfigMiningConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("teh_seed = 3").is_err());
        assert!(toml::from_str::<PipelineConfig>("[discovery]\nkk = 2").is_err());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let mut cfg = PipelineConfig::default();
        cfg.configs.alpha = 1.5;
        assert!(matches!(cfg.validate(), Err(CliError::Schema(_))));
        let mut cfg = PipelineConfig::default();
        cfg.training.rounds = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Schema(_))));
        let mut cfg = PipelineConfig::default();
        cfg.discovery.iou_min = 0.0;
        assert!(matches!(cfg.validate(), Err(CliError::Schema(_))));
    }

    #[test]
    fn json_config_loads_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 11, "training": {"rounds": 2}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.training.rounds, 2);
    }

    #[test]
    fn missing_config_file_is_missing_input() {
        let e = PipelineConfig::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
