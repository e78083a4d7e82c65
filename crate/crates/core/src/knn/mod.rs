//! k-nearest-neighbor estimators of KL divergence and differential entropy,
//! on raw sample clouds and on predictor clouds embedded through their
//! evaluations at random inputs.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

mod digamma;
mod estimators;
mod functional;
mod graph;
mod neighbors;

pub use digamma::digamma;
pub use estimators::{
    entropy_knn, entropy_knn_detailed, kl_knn, kl_knn_detailed, knn_distance, Estimate,
};
pub use functional::{
    functional_entropy, functional_entropy_detailed, functional_kl, functional_kl_detailed,
    EvalDesign, FnCloud, FunctionCloud, ParamCloud,
};
pub use graph::kl_knn_node;
pub use neighbors::{kth_neighbors, Neighbor};


/// Distances are clamped below at this value before taking logarithms.
pub const DIST_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("need at least {needed} points for k-NN, found {available}")]
    InsufficientPoints { needed: usize, available: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("sample cloud contains NaN")]
    NaN,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("digamma requires a positive argument, got {0}")]
    Domain(f64),
    #[error("invalid evaluation design: {0}")]
    Design(String),
    #[error("predictor evaluation failed: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, KnnError>;

/// `n × dim` matrix of samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    points: Array2<f64>,
}

impl SampleCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.iter().any(|v| v.is_nan()) {
            return Err(KnnError::NaN);
        }
        Ok(Self { points })
    }

    /// Cloud of 1-D points.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape"))
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}
