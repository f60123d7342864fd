//! Run configuration: defaults, overlaid by an optional TOML file, overlaid by
//! command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use itm::dataset::{DatasetConfig, SnapshotSpec, DEFAULT_POSITIVE_FRACTION, DEFAULT_VALIDATION_FRACTION};
use itm::model::TrainConfig;
use itm::pipeline::PipelineConfig;
use itm::sim::SimConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub history_fraction: f64,
    pub cold_start_lanes: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            history_fraction: 0.5,
            cold_start_lanes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub snapshots: Vec<usize>,
    pub positive_fraction: f64,
    pub leave_one_out: bool,
    pub validation_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            snapshots: SnapshotSpec::default().ping_counts().to_vec(),
            positive_fraction: DEFAULT_POSITIVE_FRACTION,
            leave_one_out: true,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Restrict candidates to the shipment's carrier.
    pub use_carriers: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { use_carriers: true }
    }
}

/// Everything a run depends on. The top-level seed is copied into every
/// section that draws random numbers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub sim: SimConfig,
    pub split: SplitSection,
    pub pipeline: PipelineConfig,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn sync_seed(&mut self) {
        self.sim.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            spec: SnapshotSpec::new(self.dataset.snapshots.clone())?,
            positive_fraction: self.dataset.positive_fraction,
            leave_one_out: self.dataset.leave_one_out,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = Config::default();
        let back: Config = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg: Config = toml::from_str("seed = 9\n[pipeline.thresholds]\ntau_high = 0.9\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.pipeline.thresholds.tau_high, 0.9);
        assert_eq!(cfg.pipeline.thresholds.tau_min, 0.3);
        assert_eq!(cfg.sim, SimConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("sede = 1\n").is_err());
    }
}
