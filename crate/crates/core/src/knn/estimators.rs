use ndarray::Array1;
use statrs::function::gamma::ln_gamma;

use super::neighbors::kth_neighbors;
use super::{digamma, KnnError, Result, SampleCloud, DIST_FLOOR};

/// Estimator value plus how many neighbor distances hit the clamp floor.
/// A nonzero count marks a degenerate (duplicated) cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub clamped: usize,
}

impl Estimate {
    pub fn is_degenerate(&self) -> bool {
        self.clamped > 0
    }
}

/// k-th smallest distance from `query` to the points of `cloud`. With
/// `exclude_self`, one point exactly equal to the query is ignored.
/// The raw distance is returned; callers clamp before logarithms.
pub fn knn_distance(
    cloud: &SampleCloud,
    query: &[f64],
    k: usize,
    exclude_self: bool,
) -> Result<f64> {
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if query.len() != cloud.dim() {
        return Err(KnnError::DimensionMismatch {
            left: cloud.dim(),
            right: query.len(),
        });
    }
    let mut dists: Vec<f64> = cloud
        .points()
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if exclude_self {
        if let Some(pos) = dists.iter().position(|d| *d == 0.0) {
            dists.swap_remove(pos);
        }
    }
    if dists.len() < k {
        return Err(KnnError::InsufficientPoints {
            needed: k,
            available: dists.len(),
        });
    }
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

fn clamp_count(d: f64, clamped: &mut usize) -> f64 {
    if d < DIST_FLOOR {
        *clamped += 1;
        DIST_FLOOR
    } else {
        d
    }
}

/// `ln(M/(N−1)) + (dim/N) Σ_i ln(s_k(q_i)/r_k(q_i))`, where `r_k` is the
/// within-`q` k-NN distance and `s_k` the k-NN distance into `p`.
pub fn kl_knn_detailed(q: &SampleCloud, p: &SampleCloud, k: usize) -> Result<Estimate> {
    if q.dim() != p.dim() {
        return Err(KnnError::DimensionMismatch {
            left: q.dim(),
            right: p.dim(),
        });
    }
    let (n, m) = (q.len(), p.len());
    if n < k + 1 {
        return Err(KnnError::InsufficientPoints {
            needed: k + 1,
            available: n,
        });
    }
    let r = kth_neighbors(q.points(), q.points(), k, true)?;
    let s = kth_neighbors(q.points(), p.points(), k, false)?;
    let mut clamped = 0;
    let mut acc = 0.0;
    for (ri, si) in r.iter().zip(&s) {
        let rd = clamp_count(ri.distance, &mut clamped);
        let sd = clamp_count(si.distance, &mut clamped);
        acc += sd.ln() - rd.ln();
    }
    let value = (m as f64 / (n as f64 - 1.0)).ln() + q.dim() as f64 / n as f64 * acc;
    Ok(Estimate { value, clamped })
}

pub fn kl_knn(q: &SampleCloud, p: &SampleCloud, k: usize) -> Result<f64> {
    kl_knn_detailed(q, p, k).map(|e| e.value)
}

/// `ln N − ψ(k) + ln(π^{d/2}/Γ(d/2+1))`.
pub(crate) fn entropy_constant(n: usize, dim: usize, k: usize) -> Result<f64> {
    let half_d = dim as f64 / 2.0;
    Ok(
        (n as f64).ln() - digamma(k as f64)? + half_d * std::f64::consts::PI.ln()
            - ln_gamma(half_d + 1.0),
    )
}

/// Kozachenko–Leonenko style entropy estimate with clamped distances.
pub fn entropy_knn_detailed(cloud: &SampleCloud, k: usize) -> Result<Estimate> {
    let n = cloud.len();
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if n < k + 1 {
        return Err(KnnError::InsufficientPoints {
            needed: k + 1,
            available: n,
        });
    }
    let r = kth_neighbors(cloud.points(), cloud.points(), k, true)?;
    let mut clamped = 0;
    let logs: Array1<f64> = r
        .iter()
        .map(|nb| clamp_count(nb.distance, &mut clamped).ln())
        .collect();
    let value = entropy_constant(n, cloud.dim(), k)? + cloud.dim() as f64 / n as f64 * logs.sum();
    Ok(Estimate { value, clamped })
}

pub fn entropy_knn(cloud: &SampleCloud, k: usize) -> Result<f64> {
    entropy_knn_detailed(cloud, k).map(|e| e.value)
}
