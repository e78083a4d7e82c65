//! Reference posteriors: Hamiltonian Monte Carlo, deep ensembles and MC
//! dropout, plus split-chain convergence diagnostics.

use thiserror::Error;

mod diagnostics;
mod dropout;
mod ensemble;
mod hmc;
mod target;

pub use diagnostics::{diagnostics, write_diagnostics_csv, Diagnostics};
pub use dropout::{train_mc_dropout, DropoutConfig};
pub use ensemble::{init_predictor, train_ensemble, EnsembleConfig};
pub use hmc::{hmc_sample, leapfrog, Chain, HmcConfig};
pub use target::{log_posterior_and_grad, PosteriorTarget};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error(transparent)]
    Diff(#[from] crate::diffmath::DiffError),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("target is not finite at the initial point")]
    NonFiniteInit,
    #[error("diagnostics need at least 4 half-chains, got {0}")]
    TooFewChains(usize),
    #[error("non-finite loss at epoch {epoch} of member {member}")]
    NonFinite { member: usize, epoch: usize },
}

pub type Result<T> = std::result::Result<T, BaselineError>;
