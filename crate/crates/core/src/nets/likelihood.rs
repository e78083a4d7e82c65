use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NetError, Result};
use crate::diffmath::{softplus, softplus_inv};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Isotropic zero-mean Gaussian prior `N(0, σ_p² I_d)` on parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub variance: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { variance: 0.5 }
    }
}

impl GaussianPrior {
    pub fn new(variance: f64) -> Self {
        assert!(variance >= 0.0, "prior variance must be non-negative");
        Self { variance }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    /// `n × d` matrix of i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, d: usize, rng: &mut R) -> Array2<f64> {
        let s = self.std();
        Array2::from_shape_simple_fn((n, d), || s * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let d = theta.len() as f64;
        let sq: f64 = theta.iter().map(|t| t * t).sum();
        -0.5 * sq / self.variance - 0.5 * d * (LN_2PI + self.variance.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Fixed,
    Learned,
}

/// Observation noise of the Gaussian likelihood, stored unconstrained with
/// `σ_l = softplus(raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodNoise {
    pub raw: f64,
    pub mode: NoiseMode,
}

impl LikelihoodNoise {
    pub fn fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(NetError::InvalidSigma(sigma));
        }
        Ok(Self {
            raw: softplus_inv(sigma),
            mode: NoiseMode::Fixed,
        })
    }

    /// Learned noise starting at `σ_l = 1` (standardized target units).
    pub fn learned() -> Self {
        Self {
            raw: softplus_inv(1.0),
            mode: NoiseMode::Learned,
        }
    }

    pub fn sigma(&self) -> f64 {
        softplus(self.raw)
    }

    pub fn is_learned(&self) -> bool {
        self.mode == NoiseMode::Learned
    }
}

/// `ln N(y | pred, σ_l²)`.
pub fn gaussian_log_lik(pred: f64, y: f64, sigma_l: f64) -> Result<f64> {
    if !(sigma_l > 0.0) {
        return Err(NetError::InvalidSigma(sigma_l));
    }
    let r = y - pred;
    Ok(-0.5 * LN_2PI - sigma_l.ln() - r * r / (2.0 * sigma_l * sigma_l))
}
