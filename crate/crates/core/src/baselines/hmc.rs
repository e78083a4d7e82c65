use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub n_leapfrog: usize,
    pub target_accept: f64,
    pub max_retained: usize,
    /// Step size the adaptation starts from; `None` searches for one.
    pub initial_step_size: Option<f64>,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_iterations: 20_000,
            n_burnin: 5_000,
            n_leapfrog: 100,
            target_accept: 0.8,
            max_retained: 10_000,
            initial_step_size: None,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_leapfrog == 0 {
            return Err(BaselineError::Config(
                "at least one leapfrog step is required".into(),
            ));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(BaselineError::Config(format!(
                "burn-in {} must be shorter than {} iterations",
                self.n_burnin, self.n_iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(BaselineError::Config(format!(
                "target acceptance {} outside (0, 1)",
                self.target_accept
            )));
        }
        if self.max_retained == 0 {
            return Err(BaselineError::Config(
                "max_retained must be positive".into(),
            ));
        }
        if let Some(e) = self.initial_step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(BaselineError::Config(format!(
                    "initial step size {e} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Keep every `thin`-th post-burn-in state.
    pub fn thinning(&self) -> usize {
        (self.n_iterations - self.n_burnin).div_ceil(self.max_retained)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Retained states, one per row.
    pub samples: Array2<f64>,
    /// Acceptance rate after burn-in.
    pub accept_rate: f64,
    /// Step size used at every iteration.
    pub step_size_trace: Vec<f64>,
    pub step_size: f64,
    pub divergences: usize,
}

/// `n` leapfrog steps from `(q, p)` with unit mass. Returns the end point,
/// its log density and its gradient.
pub fn leapfrog<F>(
    target: &F,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    eps: f64,
    n: usize,
) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut q = q.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    let mut logp = f64::NAN;
    for step in 0..n {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += eps * pi;
        }
        let (lp, ng) = target(&q);
        logp = lp;
        g = ng;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        if !logp.is_finite() && step + 1 < n {
            break;
        }
    }
    (q, p, logp, g)
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

fn draw_momentum<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Heuristic starting step size: doubles or halves a single leapfrog step
/// until the acceptance probability crosses one half.
fn find_step_size<F, R>(target: &F, q: &[f64], logp: f64, grad: &[f64], rng: &mut R) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    R: Rng + ?Sized,
{
    let mut eps: f64 = 1.0;
    let p = draw_momentum(q.len(), rng);
    let h0 = logp - kinetic(&p);
    let log_ratio = |eps: f64| {
        let (_, p1, lp1, _) = leapfrog(target, q, &p, grad, eps, 1);
        let v = lp1 - kinetic(&p1) - h0;
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let up = log_ratio(eps) > 0.5f64.ln();
    for _ in 0..100 {
        let r = log_ratio(eps);
        if up != (r > 0.5f64.ln()) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
    }
    eps
}

/// Dual-averaging state for the step size during burn-in.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    m: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: 0.0,
            m: 0.0,
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    fn update(&mut self, accept_prob: f64) -> f64 {
        self.m += 1.0;
        let w = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Hamiltonian Monte Carlo with identity mass matrix. The step size adapts
/// by dual averaging during burn-in and is frozen afterwards; post-burn-in
/// states are thinned to at most `max_retained`. A trajectory whose energy
/// is not finite is rejected and counted as a divergence.
pub fn hmc_sample<F>(target: F, init: &[f64], config: &HmcConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = init.len();
    let mut q = init.to_vec();
    let (mut logp, mut grad) = target(&q);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(BaselineError::NonFiniteInit);
    }
    let mut eps = match config.initial_step_size {
        Some(e) => e,
        None => find_step_size(&target, &q, logp, &grad, &mut rng),
    };
    let mut adapt = DualAveraging::new(eps, config.target_accept);
    let thin = config.thinning();
    let n_keep = (config.n_iterations - config.n_burnin) / thin;
    let mut samples = Array2::zeros((n_keep, d));
    let mut kept = 0;
    let mut step_size_trace = Vec::with_capacity(config.n_iterations);
    let (mut accepted, mut divergences) = (0usize, 0usize);

    for it in 0..config.n_iterations {
        step_size_trace.push(eps);
        let p0 = draw_momentum(d, &mut rng);
        let h0 = -logp + kinetic(&p0);
        let (q1, p1, logp1, grad1) = leapfrog(&target, &q, &p0, &grad, eps, config.n_leapfrog);
        let h1 = -logp1 + kinetic(&p1);
        let u: f64 = rng.random();
        let accept_prob = if h1.is_finite() && grad1.iter().all(|g| g.is_finite()) {
            (h0 - h1).exp().min(1.0)
        } else {
            divergences += 1;
            0.0
        };
        if u < accept_prob {
            q = q1;
            logp = logp1;
            grad = grad1;
            if it >= config.n_burnin {
                accepted += 1;
            }
        }
        if it < config.n_burnin {
            eps = adapt.update(accept_prob);
            if it + 1 == config.n_burnin {
                eps = adapt.final_step_size();
            }
        } else {
            let since = it - config.n_burnin;
            if (since + 1).is_multiple_of(thin) && kept < n_keep {
                samples.row_mut(kept).assign(&ndarray::ArrayView1::from(&q));
                kept += 1;
            }
        }
    }
    Ok(Chain {
        samples,
        accept_rate: accepted as f64 / (config.n_iterations - config.n_burnin) as f64,
        step_size_trace,
        step_size: eps,
        divergences,
    })
}
