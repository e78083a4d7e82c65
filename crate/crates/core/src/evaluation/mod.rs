//! Posterior metrics: RMSE and log posterior predictive in original target
//! units, kNN entropies in parameter and predictor space, per-input
//! epistemic uncertainty, cross-model KL, and report files.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, InputDistribution};
use crate::inference::{Posterior, Space};
use crate::knn::{
    entropy_knn_detailed, functional_entropy_detailed, functional_kl_detailed, kl_knn_detailed,
    Estimate, EvalDesign, ParamCloud, SampleCloud,
};
use crate::nets::predict_batch;

mod report;

pub use report::{
    emit_report, write_band_svg, write_entropy_table, write_histograms, write_metric_table,
    BandData, EpistemicGroups, MetricReport, TableMetric, METRICS_HEADER,
};


#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Knn(#[from] crate::knn::KnnError),
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Why a metric value should not be read at face value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    None,
    /// The posterior has fewer distinct members than requested draws; the
    /// value is computed on the distinct members only.
    FiniteSupport,
    /// Neighbor distances hit the clamp floor.
    Degenerate,
}

impl MetricFlag {
    /// Text written in place of a flagged value in report tables.
    pub fn token(self) -> Option<&'static str> {
        match self {
            MetricFlag::None => None,
            MetricFlag::FiniteSupport => Some("finite_support"),
            MetricFlag::Degenerate => Some("degenerate"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub flag: MetricFlag,
}

impl MetricValue {
    pub fn is_flagged(&self) -> bool {
        self.flag != MetricFlag::None
    }

    fn from_estimate(e: Estimate, support_limited: bool) -> Self {
        let flag = if support_limited {
            MetricFlag::FiniteSupport
        } else if e.is_degenerate() {
            MetricFlag::Degenerate
        } else {
            MetricFlag::None
        };
        Self {
            value: e.value,
            flag,
        }
    }
}

/// Sample sizes and estimator settings shared by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n_samples: usize,
    /// Neighbor order for entropy estimates.
    pub k_entropy: usize,
    /// Neighbor order for KL estimates.
    pub k_kl: usize,
    /// Inputs per ν draw for predictor-space estimates.
    pub t: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            k_entropy: 5,
            k_kl: 1,
            t: 200,
            n_draws: 100,
            seed: 0,
        }
    }
}

/// Parameter draws used for a metric. Finite-support posteriors contribute
/// each distinct member once when fewer than `n` exist.
fn draws(post: &Posterior, n: usize, seed: u64) -> (Array2<f64>, bool) {
    match post.finite_support() {
        Some(m) if m < n => (post.sample(m, seed), true),
        _ => (post.sample(n, seed), false),
    }
}

/// `n × m` predictions (model units) of `n` posterior draws at the rows of `x`.
pub fn predictive_draws(
    post: &Posterior,
    x: ArrayView2<f64>,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let thetas = post.sample(n, seed);
    Ok(predict_batch(&post.arch, thetas.view(), x)?)
}

/// RMSE of the draw-mean prediction, rescaled by `y_std`.
pub fn rmse_from_predictions(preds: ArrayView2<f64>, y: ArrayView1<f64>, y_std: f64) -> f64 {
    let mean = preds.mean_axis(Axis(0)).expect("at least one draw");
    let mse = mean
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    mse.sqrt() * y_std
}

/// Mean over test points of the log of the draw-averaged Gaussian density,
/// with the `−ln y_std` change of variables to original units.
pub fn lpp_from_predictions(
    preds: ArrayView2<f64>,
    y: ArrayView1<f64>,
    sigma_l: f64,
    y_std: f64,
) -> f64 {
    let s = preds.nrows() as f64;
    let mut total = 0.0;
    let mut logs = vec![0.0; preds.nrows()];
    for (j, &t) in y.iter().enumerate() {
        for (l, p) in logs.iter_mut().zip(preds.column(j)) {
            *l = -0.5 * ((t - p) / sigma_l).powi(2) - sigma_l.ln() - HALF_LN_2PI;
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - s.ln();
    }
    total / y.len() as f64 - y_std.ln()
}

pub fn rmse(post: &Posterior, test: &Dataset, n_samples: usize, seed: u64) -> Result<f64> {
    let preds = predictive_draws(post, test.x.view(), n_samples, seed)?;
    Ok(rmse_from_predictions(
        preds.view(),
        test.y.view(),
        test.stats().y_std,
    ))
}

pub fn lpp(post: &Posterior, test: &Dataset, n_samples: usize, seed: u64) -> Result<f64> {
    let preds = predictive_draws(post, test.x.view(), n_samples, seed)?;
    Ok(lpp_from_predictions(
        preds.view(),
        test.y.view(),
        post.sigma_l,
        test.stats().y_std,
    ))
}

fn need_nu(
    space: Space,
    nu: Option<&InputDistribution>,
) -> Result<Option<&InputDistribution>> {
    match (space, nu) {
        (Space::Predictor, None) => Err(EvalError::Usage(
            "predictor-space metrics need an input distribution".into(),
        )),
        (_, nu) => Ok(nu),
    }
}

fn design(settings: &EvalSettings, nu: &InputDistribution) -> Result<EvalDesign> {
    Ok(EvalDesign::new(settings.t, settings.n_draws, nu.clone())?)
}

/// kNN entropy of the posterior, on raw parameters or on evaluation vectors
/// at ν inputs. `k` shrinks to fit when only a few distinct members exist.
pub fn posterior_entropy(
    post: &Posterior,
    space: Space,
    nu: Option<&InputDistribution>,
    settings: &EvalSettings,
) -> Result<MetricValue> {
    let nu = need_nu(space, nu)?;
    let (thetas, limited) = draws(post, settings.n_samples, settings.seed);
    let k = settings
        .k_entropy
        .min(thetas.nrows().saturating_sub(1))
        .max(1);
    let est = match space {
        Space::Parameter => entropy_knn_detailed(&SampleCloud::new(thetas)?, k)?,
        Space::Predictor => {
            let cloud = ParamCloud {
                arch: &post.arch,
                thetas: thetas.view(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(1);
            functional_entropy_detailed(
                &cloud,
                &design(settings, nu.expect("checked"))?,
                k,
                &mut rng,
            )?
        }
    };
    Ok(MetricValue::from_estimate(est, limited))
}

/// 1-D kNN entropy of the predictions at each row of `x`, sharing one set of
/// posterior draws across all rows.
pub fn epistemic_profile(
    post: &Posterior,
    x: ArrayView2<f64>,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<MetricValue>> {
    let (thetas, limited) = draws(post, n_samples, seed);
    let k = k.min(thetas.nrows().saturating_sub(1)).max(1);
    let preds = predict_batch(&post.arch, thetas.view(), x)?;
    preds
        .columns()
        .into_iter()
        .map(|col| {
            let cloud = SampleCloud::from_scalars(&col.to_vec())?;
            Ok(MetricValue::from_estimate(
                entropy_knn_detailed(&cloud, k)?,
                limited,
            ))
        })
        .collect()
}

pub fn epistemic_uncertainty(
    post: &Posterior,
    x: &[f64],
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<MetricValue> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    Ok(epistemic_profile(post, row, n_samples, k, seed)?[0])
}

/// kNN estimate of KL(a ‖ b) from independent draws of both posteriors.
pub fn cross_model_kl(
    a: &Posterior,
    b: &Posterior,
    space: Space,
    nu: Option<&InputDistribution>,
    settings: &EvalSettings,
) -> Result<MetricValue> {
    if a.arch != b.arch {
        return Err(EvalError::Usage(
            "cross-model KL needs posteriors over the same architecture".into(),
        ));
    }
    let nu = need_nu(space, nu)?;
    let (ta, la) = draws(a, settings.n_samples, settings.seed);
    let (tb, lb) = draws(b, settings.n_samples, settings.seed.wrapping_add(1));
    let est = match space {
        Space::Parameter => kl_knn_detailed(
            &SampleCloud::new(ta)?,
            &SampleCloud::new(tb)?,
            settings.k_kl,
        )?,
        Space::Predictor => {
            let ca = ParamCloud {
                arch: &a.arch,
                thetas: ta.view(),
            };
            let cb = ParamCloud {
                arch: &b.arch,
                thetas: tb.view(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(2);
            functional_kl_detailed(
                &ca,
                &cb,
                &design(settings, nu.expect("checked"))?,
                settings.k_kl,
                &mut rng,
            )?
        }
    };
    Ok(MetricValue::from_estimate(est, la || lb))
}

/// Median of the finite values, NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Lower quartile, median, upper quartile (linear interpolation).
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return [f64::NAN; 3];
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    [q(0.25), q(0.5), q(0.75)]
}
