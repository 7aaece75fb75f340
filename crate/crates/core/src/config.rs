//! The global JSON configuration: one document with sections for both
//! branches, the fusion head, the loss, the optimizer, and the data pipeline.
//! Unknown keys are rejected; omitted fields take their documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, SceneSpec};
use crate::deeplab::AsppConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::segnet::SegNetConfig;
use crate::train::TrainConfig;

/// Data-pipeline settings: dataset location, tile size, augmentation, and
/// the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root; the CLI `--data` flag overrides this.
    pub root: Option<PathBuf>,
    pub tile_size: usize,
    pub augment: AugmentationConfig,
    pub scene: SceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            tile_size: 64,
            augment: AugmentationConfig::default(),
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub segnet: SegNetConfig,
    pub deeplab: AsppConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: GlobalConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.augment.validate()?;
        self.data.scene.validate()?;
        if self.data.tile_size < 8 {
            return Err(Error::config("tile_size must be >= 8"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            segnet: self.segnet.clone(),
            deeplab: self.deeplab.clone(),
            fusion: self.fusion.clone(),
        }
    }

    /// Pretty JSON with every default resolved, for provenance dumps.
    pub fn to_resolved_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let cfg: GlobalConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, GlobalConfig::default());
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.train.lr0, 1e-4);
        assert_eq!(cfg.train.weight_decay, 1e-5);
        assert_eq!(cfg.loss.alpha, 0.5);
        assert_eq!(cfg.segnet.stage_channels, vec![16, 32, 64]);
        assert_eq!(cfg.deeplab.dilation_rates, vec![1, 2, 4]);
        assert_eq!(cfg.fusion.threshold, 0.5);
        assert_eq!(cfg.data.tile_size, 64);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg: GlobalConfig =
            serde_json::from_str(r#"{"train": {"epochs": 3}, "loss": {"alpha": 0.25}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.loss.alpha, 0.25);
        assert_eq!(cfg.loss.dice_smooth, 1.0);
    }

    #[test]
    fn unknown_keys_rejected_at_any_level() {
        assert!(serde_json::from_str::<GlobalConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(
            serde_json::from_str::<GlobalConfig>(r#"{"train": {"learning_rate": 0.1}}"#).is_err()
        );
        assert!(serde_json::from_str::<GlobalConfig>(r#"{"segnet": {"depth": 3}}"#).is_err());
    }

    #[test]
    fn resolved_json_round_trips() {
        let cfg = GlobalConfig::default();
        let text = cfg.to_resolved_json().unwrap();
        let back: GlobalConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_values_rejected_by_validate() {
        let mut cfg = GlobalConfig::default();
        cfg.fusion.threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = GlobalConfig::default();
        cfg.loss.alpha = 2.0;
        assert!(cfg.validate().is_err());
    }
}
