//! Experiment configuration file (TOML).
//!
//! Every section is optional and falls back to the preset defaults. Unknown
//! keys are rejected so typos surface as errors with line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GridConfig, SphericalGrid};
use crate::harness::{ExperimentPlan, TracerThresholds};
use crate::surrogate::{EruptionSpec, ModelParams, PRESET_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Days at which the experiment writes DOT snapshots.
    pub dot_days: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            dot_days: vec![60.0, 120.0, 365.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: String,
    pub grid: GridConfig,
    pub model: ModelParams,
    pub eruption: EruptionSpec,
    pub plan: ExperimentPlan,
    pub thresholds: TracerThresholds,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: PRESET_ID.to_string(),
            grid: GridConfig::default(),
            model: ModelParams::preset(),
            eruption: EruptionSpec::default(),
            plan: ExperimentPlan::default(),
            thresholds: TracerThresholds::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A missing or unreadable file is a
    /// configuration error naming the path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.preset != PRESET_ID {
            return Err(Error::config(format!(
                "unknown surrogate preset {:?}, expected {PRESET_ID:?}",
                self.preset
            )));
        }
        self.grid()?;
        self.model.validate()?;
        self.eruption.validate()?;
        self.plan.validate()?;
        self.thresholds.validate()?;
        if let Some(d) = self.output.dot_days.iter().find(|d| !(**d >= 0.0 && **d <= self.model.run_length_days())) {
            return Err(Error::config(format!(
                "output.dot_days entry {d} outside the run (0 to {} days)",
                self.model.run_length_days()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SphericalGrid> {
        SphericalGrid::from_config(&self.grid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization of the effective configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
