use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{InferenceError, Result};
use crate::nets::NoiseMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nn-hyvi")]
    NnHyvi,
    #[serde(rename = "funn-hyvi")]
    FunnHyvi,
    #[serde(rename = "mfvi")]
    Mfvi,
    #[serde(rename = "funn-mfvi")]
    FunnMfvi,
    #[serde(rename = "hmc")]
    Hmc,
    #[serde(rename = "ensemble")]
    Ensemble,
    #[serde(rename = "dropout")]
    Dropout,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::NnHyvi,
        Method::FunnHyvi,
        Method::Mfvi,
        Method::FunnMfvi,
        Method::Hmc,
        Method::Ensemble,
        Method::Dropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NnHyvi => "nn-hyvi",
            Method::FunnHyvi => "funn-hyvi",
            Method::Mfvi => "mfvi",
            Method::FunnMfvi => "funn-mfvi",
            Method::Hmc => "hmc",
            Method::Ensemble => "ensemble",
            Method::Dropout => "dropout",
        }
    }

    pub fn is_variational(self) -> bool {
        matches!(
            self,
            Method::NnHyvi | Method::FunnHyvi | Method::Mfvi | Method::FunnMfvi
        )
    }

    pub fn is_functional(self) -> bool {
        matches!(self, Method::FunnHyvi | Method::FunnMfvi)
    }

    pub fn is_mean_field(self) -> bool {
        matches!(self, Method::Mfvi | Method::FunnMfvi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| InferenceError::Config(format!("unknown method {s:?}")))
    }
}

/// Observation-noise setting: a fixed σ_l, or learned jointly from σ_l = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    /// Used when `mode` is fixed.
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Fixed,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_ll_samples: usize,
    pub n_kl_samples: usize,
    pub k: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_factor: f64,
    /// Plateau patience in epochs; mean-field methods use twice this value.
    pub patience_epochs: usize,
    /// Relative improvement below which an epoch counts as no progress.
    pub plateau_threshold: f64,
    pub max_epochs: usize,
    /// Inputs per ν draw for predictor-space KL terms.
    pub eval_t: usize,
    pub eval_draws: usize,
    pub noise: NoiseConfig,
    pub prior_variance: f64,
    pub hypernet_noise_dim: usize,
    pub hypernet_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_ll_samples: 100,
            n_kl_samples: 500,
            k: 1,
            batch_size: 50,
            lr_init: 0.005,
            lr_min: 1e-4,
            lr_factor: 0.7,
            patience_epochs: 30,
            plateau_threshold: 1e-4,
            max_epochs: 2000,
            eval_t: 50,
            eval_draws: 1,
            noise: NoiseConfig::default(),
            prior_variance: 0.5,
            hypernet_noise_dim: 5,
            hypernet_hidden: vec![20, 40],
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the tabular benchmarks (T = 200; larger batches and a
    /// shorter budget when the dataset is large).
    pub fn uci(large: bool) -> Self {
        Self {
            eval_t: 200,
            batch_size: if large { 500 } else { 50 },
            max_epochs: if large { 500 } else { 2000 },
            ..Self::default()
        }
    }

    pub fn patience_for(&self, method: Method) -> usize {
        if method.is_mean_field() {
            2 * self.patience_epochs
        } else {
            self.patience_epochs
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_ll_samples", self.n_ll_samples),
            ("n_kl_samples", self.n_kl_samples),
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("eval_t", self.eval_t),
            ("eval_draws", self.eval_draws),
            ("hypernet_noise_dim", self.hypernet_noise_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(InferenceError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_kl_samples < self.k + 1 {
            return Err(InferenceError::Config("n_kl_samples must exceed k".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_init) {
            return Err(InferenceError::Config("need 0 < lr_min < lr_init".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(InferenceError::Config(
                "lr_factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.prior_variance > 0.0) {
            return Err(InferenceError::Config(
                "prior_variance must be positive".into(),
            ));
        }
        if self.noise.mode == NoiseMode::Fixed && !(self.noise.sigma > 0.0) {
            return Err(InferenceError::Config(
                "fixed sigma must be positive".into(),
            ));
        }
        Ok(())
    }
}
