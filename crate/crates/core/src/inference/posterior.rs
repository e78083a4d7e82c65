use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{InferenceError, Method, Result};
use crate::diffmath::{softplus, softplus_inv};
use crate::nets::{read_param_batch, write_param_batch, HyperNet, PredictorArch};

/// Diagonal Gaussian `N(μ, diag(softplus(ρ)²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl MeanFieldParams {
    /// Means near zero (std 0.1) and standard deviations of 0.01.
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            mu: (0..d)
                .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            rho: vec![softplus_inv(0.01); d],
        }
    }

    pub fn from_moments(mu: Vec<f64>, sigma: &[f64]) -> Self {
        assert_eq!(mu.len(), sigma.len(), "moment lengths");
        Self {
            mu,
            rho: sigma.iter().map(|s| softplus_inv(*s)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|r| softplus(*r)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let sd = self.sigma();
        let d = self.dim();
        Array2::from_shape_fn((n, d), |(_, j)| {
            self.mu[j] + sd[j] * rng.sample::<f64, _>(StandardNormal)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorKind {
    Hypernet(HyperNet),
    MeanField(MeanFieldParams),
    /// Retained Markov chain states.
    Samples(Array2<f64>),
    /// One parameter row per member.
    Ensemble(Array2<f64>),
    /// Trained weights; each draw applies an independent dropout mask.
    Dropout {
        weights: Vec<f64>,
        p_drop: f64,
    },
}

impl PosteriorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PosteriorKind::Hypernet(_) => "hypernet",
            PosteriorKind::MeanField(_) => "meanfield",
            PosteriorKind::Samples(_) => "hmc_samples",
            PosteriorKind::Ensemble(_) => "ensemble",
            PosteriorKind::Dropout { .. } => "dropout",
        }
    }
}

/// A distribution over predictor parameters that can be sampled reproducibly.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub method: Method,
    pub arch: PredictorArch,
    /// Observation noise in the units the model was trained in.
    pub sigma_l: f64,
    pub kind: PosteriorKind,
}

/// Zeroes the outgoing weights of each hidden unit with probability `p`
/// and rescales the survivors by `1/(1−p)`.
pub fn apply_dropout_mask<R: Rng + ?Sized>(
    arch: &PredictorArch,
    theta: &mut [f64],
    p: f64,
    rng: &mut R,
) {
    if p <= 0.0 {
        return;
    }
    let keep_scale = 1.0 / (1.0 - p);
    let layouts = arch.layouts();
    for next in layouts.iter().skip(1) {
        for unit in 0..next.fan_in {
            let factor = if rng.random_bool(p) { 0.0 } else { keep_scale };
            for row in 0..next.fan_out {
                theta[next.weight_offset + row * next.fan_in + unit] *= factor;
            }
        }
    }
}

impl Posterior {
    pub fn dim(&self) -> usize {
        self.arch.num_params()
    }

    /// `n × d` parameter draws, deterministic given `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.kind {
            PosteriorKind::Hypernet(h) => h.sample(n, &mut rng),
            PosteriorKind::MeanField(mf) => mf.sample(n, &mut rng),
            PosteriorKind::Samples(s) => {
                let total = s.nrows();
                let idx: Vec<usize> = if n <= total {
                    let mut all: Vec<usize> = (0..total).collect();
                    all.shuffle(&mut rng);
                    all.truncate(n);
                    all
                } else {
                    (0..n).map(|_| rng.random_range(0..total)).collect()
                };
                s.select(Axis(0), &idx)
            }
            PosteriorKind::Ensemble(members) => {
                let m = members.nrows();
                let idx: Vec<usize> = (0..n).map(|i| i % m).collect();
                members.select(Axis(0), &idx)
            }
            PosteriorKind::Dropout { weights, p_drop } => {
                let mut out = Array2::zeros((n, weights.len()));
                for mut row in out.rows_mut() {
                    let mut theta = weights.clone();
                    apply_dropout_mask(&self.arch, &mut theta, *p_drop, &mut rng);
                    row.assign(&ndarray::ArrayView1::from(&theta));
                }
                out
            }
        }
    }

    /// Number of distinct parameter vectors, when finite.
    pub fn finite_support(&self) -> Option<usize> {
        match &self.kind {
            PosteriorKind::Ensemble(m) => Some(m.nrows()),
            PosteriorKind::Samples(s) => Some(s.nrows()),
            _ => None,
        }
    }

    fn state_rows(&self) -> Array2<f64> {
        match &self.kind {
            PosteriorKind::Hypernet(h) => {
                Array2::from_shape_vec((1, h.num_params()), h.params()).expect("row")
            }
            PosteriorKind::MeanField(mf) => {
                let mut a = Array2::zeros((2, mf.dim()));
                a.row_mut(0).assign(&ndarray::ArrayView1::from(&mf.mu));
                a.row_mut(1).assign(&ndarray::ArrayView1::from(&mf.rho));
                a
            }
            PosteriorKind::Samples(s) | PosteriorKind::Ensemble(s) => s.clone(),
            PosteriorKind::Dropout { weights, .. } => {
                Array2::from_shape_vec((1, weights.len()), weights.clone()).expect("row")
            }
        }
    }

    /// Writes `<stem>.bin` (parameter-batch format) and `<stem>.json`.
    pub fn save(
        &self,
        dir: &Path,
        stem: &str,
        provenance: Provenance,
    ) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let bin = dir.join(format!("{stem}.bin"));
        let json = dir.join(format!("{stem}.json"));
        write_param_batch(&bin, &self.state_rows())?;
        let meta = PosteriorMeta {
            method: self.method,
            kind: self.kind.tag().to_string(),
            arch: self.arch.clone(),
            sigma_l: self.sigma_l,
            hypernet_shape: match &self.kind {
                PosteriorKind::Hypernet(h) => Some((h.noise_dim, h.hidden_widths.clone())),
                _ => None,
            },
            p_drop: match &self.kind {
                PosteriorKind::Dropout { p_drop, .. } => Some(*p_drop),
                _ => None,
            },
            seed: provenance.seed,
            config_hash: provenance.config_hash,
            config: provenance.config,
            extra: provenance.extra,
        };
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
        Ok((bin, json))
    }

    /// Reads a posterior written by [`Posterior::save`]; `path` may name
    /// either file or the shared stem.
    pub fn load(path: &Path) -> Result<(Self, PosteriorMeta)> {
        let bin = path.with_extension("bin");
        let json = path.with_extension("json");
        let meta: PosteriorMeta = serde_json::from_str(&std::fs::read_to_string(&json)?)?;
        let rows = read_param_batch(&bin)?;
        let d = meta.arch.num_params();
        let bad = |what: &str| InferenceError::Format(format!("{}: {what}", bin.display()));
        let kind = match meta.kind.as_str() {
            "hypernet" => {
                let (noise_dim, hidden) = meta
                    .hypernet_shape
                    .clone()
                    .ok_or_else(|| bad("missing hypernet shape"))?;
                let flat = rows.row(0).to_vec();
                PosteriorKind::Hypernet(HyperNet::from_params(noise_dim, hidden, d, &flat)?)
            }
            "meanfield" => {
                if rows.dim() != (2, d) {
                    return Err(bad("mean-field state must be 2 × d"));
                }
                PosteriorKind::MeanField(MeanFieldParams {
                    mu: rows.row(0).to_vec(),
                    rho: rows.row(1).to_vec(),
                })
            }
            "hmc_samples" | "ensemble" => {
                if rows.ncols() != d {
                    return Err(bad("sample width differs from the architecture"));
                }
                if meta.kind == "ensemble" {
                    PosteriorKind::Ensemble(rows)
                } else {
                    PosteriorKind::Samples(rows)
                }
            }
            "dropout" => {
                if rows.dim() != (1, d) {
                    return Err(bad("dropout state must be 1 × d"));
                }
                PosteriorKind::Dropout {
                    weights: rows.row(0).to_vec(),
                    p_drop: meta.p_drop.ok_or_else(|| bad("missing p_drop"))?,
                }
            }
            other => return Err(bad(&format!("unknown kind {other}"))),
        };
        let posterior = Posterior {
            method: meta.method,
            arch: meta.arch.clone(),
            sigma_l: meta.sigma_l,
            kind,
        };
        Ok((posterior, meta))
    }
}

/// Where a saved posterior came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Method-specific metadata (e.g. HMC acceptance rate).
    pub extra: serde_json::Value,
}

/// JSON sidecar of a saved posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeta {
    pub method: Method,
    pub kind: String,
    pub arch: PredictorArch,
    pub sigma_l: f64,
    pub hypernet_shape: Option<(usize, Vec<usize>)>,
    pub p_drop: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extra: serde_json::Value,
}
