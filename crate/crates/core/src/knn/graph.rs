use ndarray::Array2;

use super::neighbors::{kth_neighbors, Neighbor};
use super::{KnnError, Result, DIST_FLOOR};
use crate::diffmath::{CustomOp, Tape, Var};

/// Pullback of the kNN KL estimate with the neighbor assignment frozen.
/// Clamped distances contribute no gradient.
struct KlKnnOp {
    r: Vec<Neighbor>,
    s: Vec<Neighbor>,
}

fn add_log_distance_grad(
    coef: f64,
    from: ndarray::ArrayView1<f64>,
    to: ndarray::ArrayView1<f64>,
    dist: f64,
    g_from: &mut ndarray::ArrayViewMut1<f64>,
) {
    // d ln‖a − b‖ / da = (a − b) / ‖a − b‖²
    let inv = coef / (dist * dist);
    for ((g, a), b) in g_from.iter_mut().zip(from).zip(to) {
        *g += inv * (a - b);
    }
}

impl CustomOp for KlKnnOp {
    fn name(&self) -> &'static str {
        "kl_knn"
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>> {
        let (q, p) = (inputs[0], inputs[1]);
        let (n, dim) = q.dim();
        let coef = grad_out[[0, 0]] * dim as f64 / n as f64;
        let mut gq = Array2::zeros(q.dim());
        let mut gp = Array2::zeros(p.dim());
        for i in 0..n {
            let s = self.s[i];
            if s.distance >= DIST_FLOOR {
                add_log_distance_grad(
                    coef,
                    q.row(i),
                    p.row(s.index),
                    s.distance,
                    &mut gq.row_mut(i),
                );
                add_log_distance_grad(
                    coef,
                    p.row(s.index),
                    q.row(i),
                    s.distance,
                    &mut gp.row_mut(s.index),
                );
            }
            let r = self.r[i];
            if r.distance >= DIST_FLOOR {
                add_log_distance_grad(
                    -coef,
                    q.row(i),
                    q.row(r.index),
                    r.distance,
                    &mut gq.row_mut(i),
                );
                add_log_distance_grad(
                    -coef,
                    q.row(r.index),
                    q.row(i),
                    r.distance,
                    &mut gq.row_mut(r.index),
                );
            }
        }
        vec![Some(gq), Some(gp)]
    }
}

/// `kl_knn` as a scalar tape node over the rows of `q` (`N × dim`) and `p`
/// (`M × dim`). Gradients flow through the distances to both clouds.
pub fn kl_knn_node(tape: &mut Tape, q: Var, p: Var, k: usize) -> Result<Var> {
    let (qv, pv) = (tape.value(q), tape.value(p));
    if qv.ncols() != pv.ncols() {
        return Err(KnnError::DimensionMismatch {
            left: qv.ncols(),
            right: pv.ncols(),
        });
    }
    if qv.iter().chain(pv.iter()).any(|v| v.is_nan()) {
        return Err(KnnError::NaN);
    }
    let (n, m, dim) = (qv.nrows(), pv.nrows(), qv.ncols());
    if n < k + 1 {
        return Err(KnnError::InsufficientPoints {
            needed: k + 1,
            available: n,
        });
    }
    let r = kth_neighbors(qv.view(), qv.view(), k, true)?;
    let s = kth_neighbors(qv.view(), pv.view(), k, false)?;
    let acc: f64 = r
        .iter()
        .zip(&s)
        .map(|(ri, si)| si.distance.max(DIST_FLOOR).ln() - ri.distance.max(DIST_FLOOR).ln())
        .sum();
    let value = (m as f64 / (n as f64 - 1.0)).ln() + dim as f64 / n as f64 * acc;
    Ok(tape.custom(
        &[q, p],
        Array2::from_elem((1, 1), value),
        Box::new(KlKnnOp { r, s }),
    ))
}
