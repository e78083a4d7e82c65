use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::estimators::{entropy_knn_detailed, kl_knn_detailed, Estimate};
use super::{KnnError, Result, SampleCloud};
use crate::datasets::InputDistribution;
use crate::nets::{predict_batch, PredictorArch};

/// How predictors are embedded: `n_draws` independent draws of `t` inputs
/// from `nu`, each turning a predictor into its `t`-vector of evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDesign {
    pub t: usize,
    pub n_draws: usize,
    pub nu: InputDistribution,
}

impl EvalDesign {
    pub fn new(t: usize, n_draws: usize, nu: InputDistribution) -> Result<Self> {
        if t == 0 || n_draws == 0 {
            return Err(KnnError::Design(format!(
                "t = {t} and n_draws = {n_draws} must be positive"
            )));
        }
        Ok(Self { t, n_draws, nu })
    }

    /// One input draw per step, as used during training.
    pub fn training(t: usize, nu: InputDistribution) -> Self {
        Self { t, n_draws: 1, nu }
    }

    pub fn evaluation(t: usize, nu: InputDistribution) -> Self {
        Self {
            t,
            n_draws: 100,
            nu,
        }
    }
}

/// A finite set of predictors that can be evaluated at a batch of inputs.
pub trait FunctionCloud {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n × m` matrix of predictions at the `m` rows of `x`.
    fn evaluate(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Predictors given by parameter rows of a fixed architecture.
pub struct ParamCloud<'a> {
    pub arch: &'a PredictorArch,
    pub thetas: ArrayView2<'a, f64>,
}

impl FunctionCloud for ParamCloud<'_> {
    fn len(&self) -> usize {
        self.thetas.nrows()
    }

    fn evaluate(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        predict_batch(self.arch, self.thetas, x).map_err(|e| KnnError::Eval(e.to_string()))
    }
}

/// Predictors given by a closure over the input batch.
pub struct FnCloud<F> {
    pub n: usize,
    pub eval: F,
}

impl<F> FunctionCloud for FnCloud<F>
where
    F: Fn(ArrayView2<f64>) -> Array2<f64>,
{
    fn len(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok((self.eval)(x))
    }
}

fn draw_inputs<R: Rng + ?Sized>(design: &EvalDesign, rng: &mut R) -> Result<Array2<f64>> {
    if design.t == 0 || design.n_draws == 0 {
        return Err(KnnError::Design("t and n_draws must be positive".into()));
    }
    Ok(design.nu.sample(design.t, rng))
}

/// Mean over input draws of `kl_knn` between the evaluation clouds.
pub fn functional_kl_detailed<F, G, R>(
    f: &F,
    g: &G,
    design: &EvalDesign,
    k: usize,
    rng: &mut R,
) -> Result<Estimate>
where
    F: FunctionCloud + ?Sized,
    G: FunctionCloud + ?Sized,
    R: Rng + ?Sized,
{
    let mut total = 0.0;
    let mut clamped = 0;
    for _ in 0..design.n_draws {
        let x = draw_inputs(design, rng)?;
        let fq = SampleCloud::new(f.evaluate(x.view())?)?;
        let gp = SampleCloud::new(g.evaluate(x.view())?)?;
        let e = kl_knn_detailed(&fq, &gp, k)?;
        total += e.value;
        clamped += e.clamped;
    }
    Ok(Estimate {
        value: total / design.n_draws as f64,
        clamped,
    })
}

pub fn functional_kl<F, G, R>(
    f: &F,
    g: &G,
    design: &EvalDesign,
    k: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: FunctionCloud + ?Sized,
    G: FunctionCloud + ?Sized,
    R: Rng + ?Sized,
{
    functional_kl_detailed(f, g, design, k, rng).map(|e| e.value)
}

/// Mean over input draws of `entropy_knn` on the evaluation cloud, minus
/// `½ ln T` for the `1/√T` scaling of the empirical L₂ norm.
pub fn functional_entropy_detailed<F, R>(
    f: &F,
    design: &EvalDesign,
    k: usize,
    rng: &mut R,
) -> Result<Estimate>
where
    F: FunctionCloud + ?Sized,
    R: Rng + ?Sized,
{
    let mut total = 0.0;
    let mut clamped = 0;
    for _ in 0..design.n_draws {
        let x = draw_inputs(design, rng)?;
        let e = entropy_knn_detailed(&SampleCloud::new(f.evaluate(x.view())?)?, k)?;
        total += e.value;
        clamped += e.clamped;
    }
    Ok(Estimate {
        value: total / design.n_draws as f64 - 0.5 * (design.t as f64).ln(),
        clamped,
    })
}

pub fn functional_entropy<F, R>(f: &F, design: &EvalDesign, k: usize, rng: &mut R) -> Result<f64>
where
    F: FunctionCloud + ?Sized,
    R: Rng + ?Sized,
{
    functional_entropy_detailed(f, design, k, rng).map(|e| e.value)
}
