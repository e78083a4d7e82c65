//! Variational training: hypernetwork and mean-field families, with the KL
//! term estimated by nearest neighbors in parameter space or in predictor
//! space, plus the shared optimizer, schedule and posterior persistence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod config;
pub(crate) mod objectives;
mod optim;
mod posterior;
mod train;

pub use config::{Method, NoiseConfig, TrainConfig};
pub use objectives::{
    elbo_funn_hyvi, elbo_mfvi, elbo_nn_hyvi, mfvi_kl_closed_form, Batch, KlSpace, ObjectiveNodes,
    StepNoise,
};
pub use optim::{Adam, ReduceOnPlateau};
pub use posterior::{
    apply_dropout_mask, MeanFieldParams, Posterior, PosteriorKind, PosteriorMeta, Provenance,
};
pub use train::{train, StopReason, TraceRow, TrainOutcome, TrainingTrace};


#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error(transparent)]
    Knn(#[from] crate::knn::KnnError),
    #[error(transparent)]
    Diff(#[from] crate::diffmath::DiffError),
    #[error(transparent)]
    Data(#[from] crate::datasets::DataError),
    #[error("non-finite objective at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        trace: Box<TrainingTrace>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("method {0} is not a variational method")]
    NotVariational(Method),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed posterior file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Which input distribution a predictor-space objective probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Parameter,
    Predictor,
}
