//! Run configuration: one JSON document with `physics`, `dataset`, `model`
//! and `train` sections. Unknown keys are errors; absent keys take their
//! defaults, and the resolved document is written next to every output.

use std::path::{Path, PathBuf};

use pat_core::dataset::{Augment, DatasetConfig};
use pat_core::sim::{self, Grid2D, Medium, Physics, SensorArray};
use pat_net::train::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub c0: f64,
    pub rho0: f64,
    pub dx: f64,
    pub cfl: f64,
    pub sponge_cells: usize,
    pub standoff_cells: usize,
    /// Recording length; `null` picks 1.5 grid diagonals.
    pub n_steps: Option<usize>,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection {
            c0: sim::DEFAULT_C0,
            rho0: sim::DEFAULT_RHO0,
            dx: sim::DEFAULT_DX,
            cfl: sim::DEFAULT_CFL,
            sponge_cells: sim::DEFAULT_SPONGE_CELLS,
            standoff_cells: sim::DEFAULT_STANDOFF_CELLS,
            n_steps: None,
        }
    }
}

impl PhysicsSection {
    /// Acquisition geometry for `n × n` images.
    pub fn physics(&self, n: usize) -> pat_core::Result<Physics> {
        let grid = Grid2D::for_image(n, self.sponge_cells, self.standoff_cells, self.dx);
        let sensors = SensorArray::above_image(&grid, n, self.standoff_cells)?;
        let p = Physics {
            grid,
            medium: Medium {
                c0: self.c0,
                rho0: self.rho0,
            },
            sensors,
            cfl: self.cfl,
            n_steps: self.n_steps.unwrap_or_else(|| sim::default_n_steps(&grid, self.cfl)),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub augment: Augment,
    /// Directory of PGM vessel masks; synthetic masks are drawn when absent.
    pub masks: Option<PathBuf>,
    pub synthetic_masks: usize,
    /// Side of the synthetic masks; `null` means 1.5·n.
    pub synthetic_mask_size: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection {
            n: d.n,
            n_train: d.n_train,
            n_test: d.n_test,
            augment: d.augment,
            masks: None,
            synthetic_masks: 32,
            synthetic_mask_size: None,
        }
    }
}

impl DatasetSection {
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n: self.n,
            n_train: self.n_train,
            n_test: self.n_test,
            augment: self.augment,
        }
    }

    pub fn mask_size(&self) -> usize {
        self.synthetic_mask_size.unwrap_or(self.n + self.n / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub normalize_mi: bool,
    pub aux: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lambda: t.lambda,
            epsilon: t.epsilon,
            normalize_mi: t.normalize_mi,
            aux: t.aux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub physics: PhysicsSection,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            model: self.model,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lambda: t.lambda,
            epsilon: t.epsilon,
            normalize_mi: t.normalize_mi,
            seed: self.seed,
            aux: t.aux.clone(),
        }
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: String| CliError::Usage(format!("invalid configuration: {e}"));
        self.dataset.dataset().validate().map_err(|e| usage(e.to_string()))?;
        self.physics.physics(self.dataset.n).map_err(|e| usage(e.to_string()))?;
        if self.dataset.masks.is_none() && self.dataset.synthetic_masks == 0 {
            return Err(usage("no mask directory and no synthetic masks requested".into()));
        }
        if self.dataset.mask_size() < self.dataset.n {
            return Err(usage(format!("synthetic masks of side {} are smaller than n", self.dataset.mask_size())));
        }
        let t = self.train_config();
        t.arch().map_err(|e| usage(e.to_string()))?;
        t.mi().validate().map_err(|e| usage(e.to_string()))?;
        if t.batch_size == 0 || t.lr.is_nan() || t.lr <= 0.0 {
            return Err(usage("batch_size must be ≥ 1 and lr > 0".into()));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("{}: {e}", dir.display())))?;
        pat_core::dataset::write_json_atomic(&dir.join("resolved-config.json"), self).map_err(|e| CliError::Domain(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"dataset": {"n": 32}, "train": {"lambda": 0.5}}"#).unwrap();
        assert_eq!(c.dataset.n, 32);
        assert_eq!(c.dataset.n_train, 200);
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.train.epochs, 30);
        assert_eq!(c.physics.physics(32).unwrap().sensors.n_elements, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"bogus": 1}"#, r#"{"train": {"lamda": 1}}"#, r#"{"physics": {"c": 1}}"#, r#"{"model": {"kind": "ynet"}}"#] {
            assert!(serde_json::from_str::<RunConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.dataset.n = 48;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.train.lambda = -1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.physics.cfl = 0.9;
        assert!(c.validate().is_err());
    }
}
