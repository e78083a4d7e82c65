use std::path::{Path, PathBuf};

use hyvi_core::baselines::{DropoutConfig, EnsembleConfig, HmcConfig};
use hyvi_core::evaluation::EvalSettings;
use hyvi_core::inference::{Method, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

/// Where the rows come from. UCI names resolve through the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Wave,
    Uci { name: String },
    Csv { path: PathBuf, target: String },
}

impl DatasetSpec {
    /// `wave`, a known UCI name, or `path.csv[:target]` (target defaults to
    /// the last header column).
    pub fn parse(s: &str) -> Result<Self> {
        if s == "wave" {
            return Ok(DatasetSpec::Wave);
        }
        if hyvi_core::datasets::uci_spec(s).is_ok() {
            return Ok(DatasetSpec::Uci {
                name: s.to_string(),
            });
        }
        let (path, target) = match s.rsplit_once(':') {
            Some((p, t)) if p.ends_with(".csv") => (p, t.to_string()),
            _ => (s, String::new()),
        };
        if !path.ends_with(".csv") {
            return Err(CliError::Usage(format!(
                "unknown dataset {s:?}; use wave, a UCI name or a .csv path"
            )));
        }
        Ok(DatasetSpec::Csv {
            path: PathBuf::from(path),
            target,
        })
    }

    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Wave => "wave".into(),
            DatasetSpec::Uci { name } => name.clone(),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

/// One experiment: a dataset, a method and its settings. Each seed of the
/// list is an independent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub method: Method,
    /// Random subsample of the rows before splitting.
    pub subsample: Option<usize>,
    pub train_fraction: f64,
    /// Hidden width of the tabular predictor.
    pub width: usize,
    pub train: TrainConfig,
    pub hmc: HmcConfig,
    pub ensemble: EnsembleConfig,
    pub dropout: DropoutConfig,
    pub eval: EvalSettings,
    /// ν draws used as off-distribution inputs for epistemic uncertainty.
    pub ood_samples: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Wave,
            method: Method::FunnHyvi,
            subsample: None,
            train_fraction: 0.9,
            width: 50,
            train: TrainConfig::default(),
            hmc: HmcConfig::default(),
            ensemble: EnsembleConfig::default(),
            dropout: DropoutConfig::default(),
            eval: EvalSettings::default(),
            ood_samples: 1000,
            seeds: vec![0],
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.width == 0 {
            return Err(CliError::Usage("width must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        if self.ood_samples == 0 {
            return Err(CliError::Usage("ood_samples must be positive".into()));
        }
        if matches!(self.subsample, Some(n) if n < 4) {
            return Err(CliError::Usage(
                "subsample must keep at least 4 rows".into(),
            ));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.hmc
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the seed list and output directory
    /// removed, so every run of one experiment shares the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("serializable");
        if let Some(map) = value.as_object_mut() {
            map.remove("seeds");
            map.remove("out");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }

    /// The configuration as stored next to a posterior: everything but the
    /// output directory, so the same run written elsewhere is byte-identical.
    pub fn run_record(&self) -> serde_json::Value {
        let mut value = self.to_json();
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"methd": "mfvi"}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let err =
            serde_json::from_str::<ExperimentConfig>(r#"{"train": {"lr": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"method": "hmc", "dataset": {"kind": "uci", "name": "boston"}, "hmc": {"n_iterations": 100, "n_burnin": 10}}"#)
                .unwrap();
        assert_eq!(c.method, Method::Hmc);
        assert_eq!(c.hmc.n_leapfrog, HmcConfig::default().n_leapfrog);
        assert_eq!(c.dataset.name(), "boston");
    }

    #[test]
    fn hash_ignores_seed_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seeds = vec![7, 8];
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.k = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn dataset_strings() {
        assert_eq!(DatasetSpec::parse("wave").unwrap(), DatasetSpec::Wave);
        assert_eq!(
            DatasetSpec::parse("yacht").unwrap(),
            DatasetSpec::Uci {
                name: "yacht".into()
            }
        );
        assert_eq!(
            DatasetSpec::parse("d/x.csv:y").unwrap(),
            DatasetSpec::Csv {
                path: "d/x.csv".into(),
                target: "y".into()
            }
        );
        assert!(DatasetSpec::parse("nope").is_err());
    }
}
