use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::gbt::GbtParams;
use crate::siamese::ModelConfig;
use crate::triplets::MinerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// The synthetic two-building benchmark. `world_seed` defaults to the
    /// experiment seed.
    Synthetic {
        #[serde(default)]
        world_seed: Option<u64>,
    },
    /// Dataset CSV files; each file's stem is its building id.
    Csv { paths: Vec<PathBuf> },
}

/// One experiment, read from a single JSON document.
///
/// `seed` drives the split, mining, initialization and augmentation
/// streams; the `seed` fields inside the nested configs are overwritten by
/// it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub building: String,
    pub train_device: String,
    pub train_ci: u32,
    /// Empty means every device in the data.
    pub test_devices: Vec<String>,
    /// Empty means every CI in the data.
    pub test_cis: Vec<u32>,
    pub split: SplitSpec,
    pub miner: MinerConfig,
    pub model: ModelConfig,
    pub gbt: GbtParams,
    pub d_grid: Vec<f64>,
    pub samples_grid: Vec<usize>,
    pub knn_k: usize,
    /// LT-KNN refit interval in CIs; `null` never refits.
    pub ltknn_retrain_every: Option<u32>,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic { world_seed: None },
            building: "Building-A".into(),
            train_device: "A".into(),
            train_ci: 0,
            test_devices: Vec::new(),
            test_cis: Vec::new(),
            split: SplitSpec::default(),
            miner: MinerConfig::default(),
            model: ModelConfig::default(),
            gbt: GbtParams::default(),
            d_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            samples_grid: (1..=5).collect(),
            knn_k: 4,
            ltknn_retrain_every: Some(3),
            out_dir: PathBuf::from("out"),
            seed: 42,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Copy with every nested seed set from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.split.seed = c.seed;
        c.miner.seed = c.seed;
        c.model.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.miner.validate()?;
        self.model.validate()?;
        self.gbt.validate()?;
        if self.d_grid.is_empty() || self.samples_grid.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if let Some(d) = self.d_grid.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::Config(format!("D fraction {d} outside [0, 1]")));
        }
        if let Some(k) = self.samples_grid.iter().find(|&&k| k == 0 || k > self.split.train_per_rp) {
            return Err(Error::Config(format!(
                "samples per RP {k} outside 1..={}",
                self.split.train_per_rp
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        if self.ltknn_retrain_every == Some(0) {
            return Err(Error::Config("ltknn_retrain_every must be >= 1".into()));
        }
        if let DataSource::Csv { paths } = &self.source {
            if paths.is_empty() {
                return Err(Error::Config("csv source needs at least one path".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized config (the output directory excluded).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let c = ExperimentConfig::from_json(r#"{"seed": 7, "model": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.epochs, 3);
        assert_eq!(c.model.num_heads, 7);
        assert_eq!(c.d_grid.len(), 9);
        assert_eq!(c.samples_grid, vec![1, 2, 3, 4, 5]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds": 7}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"heads": 2}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"source": {"kind": "synthetic", "x": 1}}"#).is_err());
    }

    #[test]
    fn csv_source_parses() {
        let c = ExperimentConfig::from_json(r#"{"source": {"kind": "csv", "paths": ["a.csv"]}}"#).unwrap();
        assert_eq!(c.source, DataSource::Csv { paths: vec!["a.csv".into()] });
    }

    #[test]
    fn resolved_propagates_seed() {
        let c = ExperimentConfig { seed: 9, ..Default::default() }.resolved();
        assert_eq!((c.split.seed, c.miner.seed, c.model.seed), (9, 9, 9));
    }

    #[test]
    fn validation_catches_bad_grids() {
        let bad = [
            ExperimentConfig { d_grid: vec![], ..Default::default() },
            ExperimentConfig { d_grid: vec![1.5], ..Default::default() },
            ExperimentConfig { samples_grid: vec![6], ..Default::default() },
            ExperimentConfig { knn_k: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out_dir: "elsewhere".into(), ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig { seed: 1, ..Default::default() }.hash());
    }
}
