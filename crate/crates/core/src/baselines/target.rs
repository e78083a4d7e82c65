use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{BaselineError, Result};
use crate::datasets::Dataset;
use crate::diffmath::Tape;
use crate::inference::objectives::expected_log_lik;
use crate::nets::{predict_batch_node, GaussianPrior, PredictorArch};

/// Unnormalized log posterior `Σ ln N(y | f_θ(x), σ_l²) + ln p(θ)` and its
/// gradient in θ.
pub fn log_posterior_and_grad(
    theta: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    arch: &PredictorArch,
    prior: &GaussianPrior,
    sigma_l: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let th = tape.row_param(theta);
    let sigma = tape.scalar_constant(sigma_l);
    let ll = if y.is_empty() {
        tape.scalar_constant(0.0)
    } else {
        let preds = predict_batch_node(&mut tape, arch, th, x)?;
        expected_log_lik(&mut tape, preds, y, sigma)?
    };
    let sq = tape.square(th);
    let sq = tape.sum(sq);
    let quad = tape.scale(sq, -0.5 / prior.variance);
    let total = tape.add(ll, quad)?;
    tape.backward(total)?;
    let norm = prior.log_density(&vec![0.0; theta.len()]);
    Ok((
        tape.scalar(total) + norm,
        tape.grad(th).iter().copied().collect(),
    ))
}

/// The posterior of one dataset under a fixed noise level, checked once so
/// that evaluation inside the sampler cannot fail.
#[derive(Debug, Clone)]
pub struct PosteriorTarget {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub arch: PredictorArch,
    pub prior: GaussianPrior,
    pub sigma_l: f64,
}

impl PosteriorTarget {
    pub fn new(
        data: &Dataset,
        arch: &PredictorArch,
        prior: GaussianPrior,
        sigma_l: f64,
    ) -> Result<Self> {
        if data.dim() != arch.input_dim {
            return Err(BaselineError::Config(format!(
                "architecture expects {} inputs, dataset has {}",
                arch.input_dim,
                data.dim()
            )));
        }
        if !(sigma_l > 0.0) {
            return Err(BaselineError::Config(format!(
                "noise level must be positive, got {sigma_l}"
            )));
        }
        Ok(Self {
            x: data.x.clone(),
            y: data.y.clone(),
            arch: arch.clone(),
            prior,
            sigma_l,
        })
    }

    pub fn dim(&self) -> usize {
        self.arch.num_params()
    }

    /// `(log density, gradient)`; panics only if `theta` has the wrong length.
    pub fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        log_posterior_and_grad(
            theta,
            self.x.view(),
            self.y.view(),
            &self.arch,
            &self.prior,
            self.sigma_l,
        )
        .expect("target dimensions were validated")
    }
}
