use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MeanFieldParams, Result, Space};
use crate::datasets::InputDistribution;
use crate::diffmath::{Tape, Var};
use crate::knn::kl_knn_node;
use crate::nets::{
    predict_batch, predict_batch_node, GaussianPrior, HyperLeaves, HyperNet, PredictorArch,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A mini-batch together with the size of the full training set.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
    pub dataset_size: usize,
}

impl Batch<'_> {
    /// `|B| / |D|`.
    pub fn scale(&self) -> f64 {
        self.y.len() as f64 / self.dataset_size as f64
    }
}

/// All randomness consumed by one optimization step.
///
/// Draw order from the step RNG: KL-term base noise, LL-term base noise,
/// prior parameter samples, then (predictor space only) the `T` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    /// `n_kl × base_dim` base noise for the KL-term samples.
    pub eps_kl: Array2<f64>,
    /// `n_ll × base_dim` base noise for the likelihood-term samples.
    pub eps_ll: Array2<f64>,
    /// `n_kl × d` prior parameter samples.
    pub prior: Array2<f64>,
    /// `T × D` inputs from ν.
    pub x_nu: Option<Array2<f64>>,
}

impl StepNoise {
    /// `base_dim` is the hypernet noise dimension, or `d` for mean-field.
    #[allow(clippy::too_many_arguments)]
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        base_dim: usize,
        d: usize,
        n_kl: usize,
        n_ll: usize,
        prior: &GaussianPrior,
        nu: Option<(&InputDistribution, usize)>,
    ) -> Self {
        let eps_kl =
            Array2::from_shape_simple_fn((n_kl, base_dim), || rng.sample::<f64, _>(StandardNormal));
        let eps_ll =
            Array2::from_shape_simple_fn((n_ll, base_dim), || rng.sample::<f64, _>(StandardNormal));
        let prior = prior.sample(n_kl, d, rng);
        let x_nu = nu.map(|(dist, t)| dist.sample(t, rng));
        Self {
            eps_kl,
            eps_ll,
            prior,
            x_nu,
        }
    }
}

/// Handles to the pieces of an objective on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    /// `(|B|/|D|)·kl − ll`.
    pub total: Var,
    pub kl: Var,
    pub ll: Var,
}

/// Which KL estimate a mean-field objective uses.
pub type KlSpace = Space;

/// `Σ_{(x,y)∈B}` of the sample-mean Gaussian log-likelihood, for `preds`
/// of shape `S × |B|`.
pub(crate) fn expected_log_lik(
    tape: &mut Tape,
    preds: Var,
    y: ArrayView1<f64>,
    sigma: Var,
) -> Result<Var> {
    let b = y.len();
    if b == 0 {
        return Ok(tape.scalar_constant(0.0));
    }
    let s = tape.shape(preds).0 as f64;
    let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
    let neg_y = tape.row_constant(&neg_y);
    let resid = tape.add_row(preds, neg_y)?;
    let sq = tape.square(resid);
    let sse = tape.sum(sq);
    let sse = tape.scale(sse, 1.0 / s);
    let log_sigma = tape.log(sigma)?;
    let m2 = tape.scale(log_sigma, -2.0);
    let inv_var = tape.exp(m2);
    let quad = tape.mul(sse, inv_var)?;
    let quad = tape.scale(quad, -0.5);
    let norm = tape.scale(log_sigma, -(b as f64));
    let ll = tape.add(quad, norm)?;
    let c = tape.scalar_constant(-(b as f64) * HALF_LN_2PI);
    Ok(tape.add(ll, c)?)
}

fn combine(tape: &mut Tape, kl: Var, ll: Var, batch: &Batch) -> Result<ObjectiveNodes> {
    let scaled = tape.scale(kl, batch.scale());
    let total = tape.sub(scaled, ll)?;
    Ok(ObjectiveNodes { total, kl, ll })
}

/// kNN KL between the variational samples and the prior samples, either on
/// raw parameters or on their evaluations at the step's ν inputs.
fn knn_kl_term(
    tape: &mut Tape,
    arch: &PredictorArch,
    theta_kl: Var,
    noise: &StepNoise,
    k: usize,
    space: Space,
) -> Result<Var> {
    match space {
        Space::Parameter => {
            let prior = tape.constant(noise.prior.clone());
            Ok(kl_knn_node(tape, theta_kl, prior, k)?)
        }
        Space::Predictor => {
            let x = noise
                .x_nu
                .as_ref()
                .expect("predictor-space objective needs ν inputs in the step noise");
            let q_eval = predict_batch_node(tape, arch, theta_kl, x.view())?;
            let p_eval = predict_batch(arch, noise.prior.view(), x.view())?;
            let p_eval = tape.constant(p_eval);
            Ok(kl_knn_node(tape, q_eval, p_eval, k)?)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn hyvi_objective(
    tape: &mut Tape,
    hyper: &HyperNet,
    leaves: &HyperLeaves,
    arch: &PredictorArch,
    batch: &Batch,
    sigma: Var,
    noise: &StepNoise,
    k: usize,
    space: Space,
) -> Result<ObjectiveNodes> {
    let theta_kl = hyper.forward_node(tape, leaves, noise.eps_kl.clone())?;
    let kl = knn_kl_term(tape, arch, theta_kl, noise, k, space)?;
    let theta_ll = hyper.forward_node(tape, leaves, noise.eps_ll.clone())?;
    let preds = predict_batch_node(tape, arch, theta_ll, batch.x)?;
    let ll = expected_log_lik(tape, preds, batch.y, sigma)?;
    combine(tape, kl, ll, batch)
}

/// Parameter-space hypernet objective: `(|B|/|D|)·KL̂(θ, prior) − Σ_B E ln L`.
/// `sigma` is a `1×1` node holding σ_l.
#[allow(clippy::too_many_arguments)]
pub fn elbo_nn_hyvi(
    tape: &mut Tape,
    hyper: &HyperNet,
    leaves: &HyperLeaves,
    arch: &PredictorArch,
    batch: &Batch,
    sigma: Var,
    noise: &StepNoise,
    k: usize,
) -> Result<ObjectiveNodes> {
    hyvi_objective(
        tape,
        hyper,
        leaves,
        arch,
        batch,
        sigma,
        noise,
        k,
        Space::Parameter,
    )
}

/// Predictor-space hypernet objective: the KL term compares evaluations of
/// variational and prior predictors at the step's ν draw.
#[allow(clippy::too_many_arguments)]
pub fn elbo_funn_hyvi(
    tape: &mut Tape,
    hyper: &HyperNet,
    leaves: &HyperLeaves,
    arch: &PredictorArch,
    batch: &Batch,
    sigma: Var,
    noise: &StepNoise,
    k: usize,
) -> Result<ObjectiveNodes> {
    hyvi_objective(
        tape,
        hyper,
        leaves,
        arch,
        batch,
        sigma,
        noise,
        k,
        Space::Predictor,
    )
}

/// `θ = μ + σ ⊙ ε` for every row of `eps`.
fn reparameterize(tape: &mut Tape, mu: Var, sigma: Var, eps: &Array2<f64>) -> Result<Var> {
    let ones = tape.constant(Array2::ones((eps.nrows(), 1)));
    let sigma_rows = tape.matmul(ones, sigma)?;
    let eps = tape.constant(eps.clone());
    let scaled = tape.mul(eps, sigma_rows)?;
    Ok(tape.add_row(scaled, mu)?)
}

/// Mean-field objective. `mu` and `rho` are `1×d` nodes with σ = softplus(ρ).
/// In parameter space the KL term is the Monte Carlo mean of
/// `ln q(θ) − ln p(θ)` over the KL draws; in predictor space it is the kNN
/// functional estimate.
#[allow(clippy::too_many_arguments)]
pub fn elbo_mfvi(
    tape: &mut Tape,
    mu: Var,
    rho: Var,
    arch: &PredictorArch,
    batch: &Batch,
    sigma: Var,
    noise: &StepNoise,
    prior: &GaussianPrior,
    k: usize,
    space: Space,
) -> Result<ObjectiveNodes> {
    let sd = tape.softplus(rho);
    let theta_kl = reparameterize(tape, mu, sd, &noise.eps_kl)?;
    let kl = match space {
        Space::Parameter => {
            let s = noise.eps_kl.nrows() as f64;
            let d = noise.eps_kl.ncols() as f64;
            // ln q(θ) − ln p(θ) with the 2π terms cancelled
            let log_sd = tape.log(sd)?;
            let sum_log_sd = tape.sum(log_sd);
            let neg_log_sd = tape.neg(sum_log_sd);
            let sq = tape.square(theta_kl);
            let sq = tape.sum(sq);
            let prior_quad = tape.scale(sq, 1.0 / (2.0 * prior.variance * s));
            let eps_quad = noise.eps_kl.mapv(|e| e * e).sum() / (2.0 * s);
            let c = tape.scalar_constant(0.5 * d * prior.variance.ln() - eps_quad);
            let a = tape.add(neg_log_sd, prior_quad)?;
            tape.add(a, c)?
        }
        Space::Predictor => knn_kl_term(tape, arch, theta_kl, noise, k, space)?,
    };
    let theta_ll = reparameterize(tape, mu, sd, &noise.eps_ll)?;
    let preds = predict_batch_node(tape, arch, theta_ll, batch.x)?;
    let ll = expected_log_lik(tape, preds, batch.y, sigma)?;
    combine(tape, kl, ll, batch)
}

/// `KL(N(μ, σ²) ‖ N(0, σ_p² I))` in closed form.
pub fn mfvi_kl_closed_form(mf: &MeanFieldParams, prior: &GaussianPrior) -> f64 {
    let vp = prior.variance;
    mf.mu
        .iter()
        .zip(mf.sigma())
        .map(|(m, s)| {
            let v = s * s;
            0.5 * (v / vp + m * m / vp - 1.0 - (v / vp).ln())
        })
        .sum()
}
