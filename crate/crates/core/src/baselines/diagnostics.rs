use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};

use super::{BaselineError, Chain, Result};

/// Per-coordinate convergence summaries. `degenerate[j]` marks coordinates
/// whose within-chain variance is zero, where R̂ is reported as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub split_r_hat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub degenerate: Vec<bool>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Autocovariance at lags `0..n` (biased, divided by `n`).
fn autocov(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (0..n - lag)
        .map(|t| (x[t] - m) * (x[t + lag] - m))
        .sum::<f64>()
        / n as f64
}

/// R̂ over half-chains, using the pooled within/between variance estimate.
fn split_r_hat(halves: &[Vec<f64>]) -> f64 {
    let n = halves[0].len() as f64;
    let w = halves.iter().map(|h| var(h)).sum::<f64>() / halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let b = n * var(&means);
    if !(w > 0.0) {
        return f64::NAN;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Multi-chain ESS with Geyer's initial positive sequence, made monotone.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = var(&means);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| {
        let acov = chains.iter().map(|c| autocov(c, lag)).sum::<f64>() / m;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    m * nf / tau.max(1.0 / (m * nf).log10())
}

/// Split-R̂ and bulk ESS per coordinate across chains of equal length. Each
/// chain is split in half (dropping a middle state for odd lengths); fewer
/// than four halves is an error.
pub fn diagnostics(chains: &[ArrayView2<f64>]) -> Result<Diagnostics> {
    let n_halves = 2 * chains.len();
    let len = chains.iter().map(|c| c.nrows()).min().unwrap_or(0);
    if n_halves < 4 {
        return Err(BaselineError::TooFewChains(n_halves));
    }
    if len < 4 {
        return Err(BaselineError::Config(format!(
            "chains of length {len} are too short to split"
        )));
    }
    let d = chains[0].ncols();
    if chains.iter().any(|c| c.ncols() != d) {
        return Err(BaselineError::Config("chains differ in dimension".into()));
    }
    let half = len / 2;
    let mut out = Diagnostics {
        split_r_hat: Vec::with_capacity(d),
        ess_bulk: Vec::with_capacity(d),
        degenerate: Vec::with_capacity(d),
    };
    for j in 0..d {
        let cols: Vec<ArrayView1<f64>> = chains.iter().map(|c| c.column(j)).collect();
        let full: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| c.iter().take(len).copied().collect())
            .collect();
        let mut halves = Vec::with_capacity(n_halves);
        for c in &full {
            halves.push(c[..half].to_vec());
            halves.push(c[len - half..].to_vec());
        }
        let r = split_r_hat(&halves);
        out.degenerate.push(r.is_nan());
        out.split_r_hat.push(r);
        out.ess_bulk.push(ess(&full));
    }
    Ok(out)
}

impl Diagnostics {
    /// Diagnostics of the retained samples of each chain.
    pub fn of_chains(chains: &[Chain]) -> Result<Self> {
        let views: Vec<ArrayView2<f64>> = chains.iter().map(|c| c.samples.view()).collect();
        diagnostics(&views)
    }

    pub fn max_r_hat(&self) -> f64 {
        self.split_r_hat
            .iter()
            .copied()
            .filter(|r| r.is_finite())
            .fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess_bulk
            .iter()
            .copied()
            .filter(|r| r.is_finite())
            .fold(f64::NAN, f64::min)
    }
}

/// `coordinate,split_r_hat,ess_bulk,degenerate` after a `#` provenance line.
pub fn write_diagnostics_csv(diag: &Diagnostics, path: &Path, provenance: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# {provenance}")?;
    writeln!(file, "coordinate,split_r_hat,ess_bulk,degenerate")?;
    for j in 0..diag.split_r_hat.len() {
        writeln!(
            file,
            "{j},{},{},{}",
            diag.split_r_hat[j], diag.ess_bulk[j], diag.degenerate[j]
        )?;
    }
    Ok(())
}
