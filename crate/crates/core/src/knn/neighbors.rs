use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{KnnError, Result};

/// The k-th nearest reference point of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

const BLOCK: usize = 256;

fn exact_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// For every query row, the k-th nearest reference row by Euclidean
/// distance. With `exclude_diagonal` the reference row with the same index
/// as the query is skipped (within-cloud distances). Ties go to the lowest
/// reference index.
///
/// Candidates are screened with a matrix-product expansion of the squared
/// distances; every candidate within the rounding bound of the k-th screened
/// value is then recomputed exactly, so the result does not depend on the
/// screening error.
pub fn kth_neighbors(
    queries: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    k: usize,
    exclude_diagonal: bool,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if queries.ncols() != reference.ncols() {
        return Err(KnnError::DimensionMismatch {
            left: queries.ncols(),
            right: reference.ncols(),
        });
    }
    let available = reference.nrows() - usize::from(exclude_diagonal && reference.nrows() > 0);
    if available < k {
        return Err(KnnError::InsufficientPoints {
            needed: k + usize::from(exclude_diagonal),
            available: reference.nrows(),
        });
    }
    let dim = queries.ncols();
    let (nq, nr) = (queries.nrows(), reference.nrows());

    // centre both sets on a common point to keep the expansion well conditioned
    let mut center = Array1::zeros(dim);
    if nq + nr > 0 {
        center = (queries.sum_axis(Axis(0)) + reference.sum_axis(Axis(0))) / (nq + nr) as f64;
    }
    let q: Array2<f64> = &queries - &center;
    let r: Array2<f64> = &reference - &center;
    let q_std = queries.as_standard_layout();
    let r_std = reference.as_standard_layout();
    let q_norm: Vec<f64> = q.rows().into_iter().map(|row| row.dot(&row)).collect();
    let r_norm: Vec<f64> = r.rows().into_iter().map(|row| row.dot(&row)).collect();
    let r_norm_max = r_norm.iter().copied().fold(0.0, f64::max);
    let rt = r.t();
    let tol_scale = 128.0 * f64::EPSILON * (dim.max(1) as f64).sqrt();

    let mut out = Vec::with_capacity(nq);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(nr);
    let mut exact: Vec<(f64, usize)> = Vec::new();
    let mut start = 0;
    while start < nq {
        let end = (start + BLOCK).min(nq);
        let cross = q.slice(s![start..end, ..]).dot(&rt);
        for (bi, cross_row) in cross.rows().into_iter().enumerate() {
            let i = start + bi;
            keyed.clear();
            for (j, c) in cross_row.iter().enumerate() {
                if exclude_diagonal && j == i {
                    continue;
                }
                keyed.push(((q_norm[i] + r_norm[j] - 2.0 * c).max(0.0), j));
            }
            let (_, kth, _) =
                keyed.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let cutoff = kth.0 + tol_scale * (q_norm[i] + r_norm_max);
            let qi = q_std.row(i);
            let qi = qi.as_slice().expect("standard layout");
            exact.clear();
            for &(g, j) in keyed.iter() {
                if g <= cutoff {
                    let rj = r_std.row(j);
                    exact.push((
                        exact_distance(qi, rj.as_slice().expect("standard layout")),
                        j,
                    ));
                }
            }
            let (_, pick, _) =
                exact.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.push(Neighbor {
                index: pick.1,
                distance: pick.0,
            });
        }
        start = end;
    }
    Ok(out)
}
