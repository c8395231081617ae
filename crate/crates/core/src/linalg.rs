//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Greedy left-to-right Gram–Schmidt with re-orthogonalization.
///
/// A column is kept iff its residual after projecting out the kept columns
/// to its left has norm above `abs_tol`. Returns the orthonormal basis of the
/// kept columns and the kept/dropped index lists (both ascending).
pub fn greedy_orthonormalize(
    a: &DMatrix<f64>,
    abs_tol: f64,
) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
    let n = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > abs_tol && norm.is_finite() {
            basis.push(v / norm);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    let mut q = DMatrix::zeros(n, basis.len());
    for (k, b) in basis.iter().enumerate() {
        q.set_column(k, b);
    }
    (q, kept, dropped)
}

pub fn max_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |m, &s| m.max(s))
}

/// `v - Q Q' v` applied twice, for an orthonormal `q`.
pub fn residualize(q: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    if q.ncols() == 0 {
        return v.clone();
    }
    let mut out = v.clone();
    for _ in 0..2 {
        let coef = q.tr_mul(&out);
        out -= q * coef;
    }
    out
}

/// Least-squares coefficients via SVD pseudo-inverse.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if x.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
    let eps = (smax * RANK_TOL).max(f64::MIN_POSITIVE);
    svd.solve(y, eps)
        .unwrap_or_else(|_| DVector::zeros(x.ncols()))
}

/// Linear-interpolation (type 7) sample quantile, `p` in [0, 1].
pub fn quantile_linear(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `ceil(level * len)`-th smallest value (1-based), clamped to the sample.
pub fn upper_order_statistic(values: &mut [f64], level: f64) -> f64 {
    assert!(!values.is_empty());
    let b = values.len();
    // guard against 0.95 * 1000 = 950.0000000000001
    let k = ((level * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}
