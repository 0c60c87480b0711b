//! Run configuration: a TOML file whose values command-line flags override.

use std::path::Path;

use rhrnet_core::training::TrainSchedule;
use rhrnet_core::ModelConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub schedule: TrainSchedule,
    pub data: DataSection,
}

/// Unset fields fall back to the default network, or to the default scaled
/// by `scale` when that is given.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub scale: Option<f64>,
    pub segment_len: Option<usize>,
    pub widths: Option<[usize; 7]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Share of training segments held out for validation. `0` validates on
    /// the training set itself.
    pub val_fraction: f64,
    /// Resample inputs that are not at 16 kHz instead of rejecting them.
    pub resample: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            val_fraction: 0.05,
            resample: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let base = match self.model.scale {
            Some(s) => ModelConfig::scaled(s).map_err(|e| CliError::Usage(e.to_string()))?,
            None => ModelConfig::default(),
        };
        let config = ModelConfig {
            segment_len: self.model.segment_len.unwrap_or(base.segment_len),
            widths: self.model.widths.unwrap_or(base.widths),
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model_config()?;
        self.schedule.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(CliError::Usage("data.val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `"tiny"`, `"default"`, or a positive shrink factor such as `16`.
pub fn parse_scale(s: &str) -> Result<f64, String> {
    match s.to_ascii_lowercase().as_str() {
        "tiny" => Ok(16.0),
        "default" | "full" => Ok(1.0),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| format!("invalid scale {s:?}: expected tiny, default or a positive number")),
    }
}
