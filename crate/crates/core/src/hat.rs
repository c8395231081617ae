//! Zero-diagonal ("jackknife") hat matrices and balanced-design diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HatKind {
    Ridge,
    Projection,
    Custom,
}

/// `H = U diag(w) U' - diag(d)`: lets `H * M` run in O(n r) per column.
#[derive(Debug, Clone)]
struct LowRank {
    u: DMatrix<f64>,
    w: DVector<f64>,
    diag: DVector<f64>,
}

/// An n x n weight matrix with identically zero diagonal.
#[derive(Debug, Clone)]
pub struct HatMatrix {
    h: DMatrix<f64>,
    kind: HatKind,
    ridge_penalty: Option<f64>,
    dof: f64,
    factor: Option<LowRank>,
    removed_diagonal: Option<Vec<f64>>,
}

impl HatMatrix {
    /// Wraps an arbitrary square matrix, zeroing its diagonal.
    pub fn custom(raw: DMatrix<f64>) -> Result<Self> {
        if !raw.is_square() {
            return Err(Error::Dimension(format!(
                "hat matrix must be square, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("hat matrix has non-finite entries".into()));
        }
        let dof = raw.trace();
        let mut h = raw;
        h.fill_diagonal(0.0);
        Ok(Self {
            h,
            kind: HatKind::Custom,
            ridge_penalty: None,
            dof,
            factor: None,
            removed_diagonal: None,
        })
    }

    pub(crate) fn from_conjugated(mut h: DMatrix<f64>, original: &HatMatrix) -> Self {
        let removed: Vec<f64> = h.diagonal().iter().copied().collect();
        h.fill_diagonal(0.0);
        Self {
            h,
            kind: original.kind,
            ridge_penalty: original.ridge_penalty,
            dof: original.dof,
            factor: None,
            removed_diagonal: Some(removed),
        }
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn kind(&self) -> HatKind {
        self.kind
    }
    pub fn ridge_penalty(&self) -> Option<f64> {
        self.ridge_penalty
    }
    pub fn dof(&self) -> f64 {
        self.dof
    }
    /// Diagonal entries removed after conjugation by the control annihilator.
    pub fn removed_diagonal(&self) -> Option<&[f64]> {
        self.removed_diagonal.as_deref()
    }

    /// `H * m`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Some(f) => {
                let mut inner = f.u.tr_mul(m);
                for (mut row, &w) in inner.row_iter_mut().zip(f.w.iter()) {
                    row *= w;
                }
                let mut out = &f.u * inner;
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        out[(i, j)] -= f.diag[i] * m[(i, j)];
                    }
                }
                out
            }
            None => &self.h * m,
        }
    }

    /// `(sum_{j != i} h_ij^2)^{1/2}` for every row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.h.row_iter().map(|r| r.norm()).collect()
    }
}

fn singular_values(z: &DMatrix<f64>) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    z.clone().svd(false, false).singular_values.iter().copied().collect()
}

fn dof_from_spectrum(sv: &[f64], lambda: f64) -> f64 {
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let cut = smax * RANK_TOL;
    sv.iter()
        .filter(|&&s| s > cut)
        .map(|&s| {
            let s2 = s * s;
            s2 / (s2 + lambda)
        })
        .sum()
}

/// `trace(Z (Z'Z + lambda I)^+ Z')` from the singular values of `Z`.
pub fn effective_dof(z: &DMatrix<f64>, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "ridge penalty must be nonnegative");
    dof_from_spectrum(&singular_values(z), lambda)
}

/// Smallest ridge penalty whose effective degrees of freedom do not exceed
/// `target`, by bracket doubling and bisection on the monotone dof curve.
fn ridge_penalty_for(sv: &[f64], target: f64) -> f64 {
    if dof_from_spectrum(sv, 0.0) <= target {
        return 0.0;
    }
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let mut lo = 0.0;
    let mut hi = smax * smax;
    while dof_from_spectrum(sv, hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    let mut dof_lo = dof_from_spectrum(sv, lo);
    let mut dof_hi = dof_from_spectrum(sv, hi);
    let mut iter = 0;
    while dof_lo - dof_hi >= 1e-6 && iter < 500 {
        let mid = 0.5 * (lo + hi);
        let d = dof_from_spectrum(sv, mid);
        if d > target {
            lo = mid;
            dof_lo = d;
        } else {
            hi = mid;
            dof_hi = d;
        }
        iter += 1;
    }
    hi
}

fn spectral_hat(z: &DMatrix<f64>, lambda: f64, kind: HatKind) -> Result<HatMatrix> {
    let n = z.nrows();
    let svd = z.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    if smax == 0.0 {
        return Err(Error::InvalidArgument("instrument matrix is identically zero".into()));
    }
    let keep: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] > smax * RANK_TOL).collect();
    let u = u.select_columns(&keep);
    let w = DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&k| {
            let s2 = sv[k] * sv[k];
            s2 / (s2 + lambda)
        }),
    );
    let dof = w.sum();
    let mut uw = u.clone();
    for (mut col, &wk) in uw.column_iter_mut().zip(w.iter()) {
        col *= wk;
    }
    let mut h = &uw * u.transpose();
    let diag = h.diagonal();
    h.fill_diagonal(0.0);
    let factor = (keep.len() * 2 < n).then_some(LowRank { u, w, diag });
    Ok(HatMatrix {
        h,
        kind,
        ridge_penalty: (kind == HatKind::Ridge).then_some(lambda),
        dof,
        factor,
        removed_diagonal: None,
    })
}

/// Deleted-diagonal ridge hat matrix with the penalty set so the effective
/// degrees of freedom are at most `dof_fraction * n`.
pub fn ridge_hat(z: &DMatrix<f64>, dof_fraction: f64) -> Result<HatMatrix> {
    if !(dof_fraction > 0.0 && dof_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dof fraction must lie in (0, 1], got {dof_fraction}"
        )));
    }
    let sv = singular_values(z);
    if sv.iter().all(|&s| s == 0.0) {
        return Err(Error::InvalidArgument("instrument matrix is identically zero".into()));
    }
    let lambda = ridge_penalty_for(&sv, dof_fraction * z.nrows() as f64);
    spectral_hat(z, lambda, HatKind::Ridge)
}

/// Ridge hat at a caller-chosen penalty.
pub fn ridge_hat_with_penalty(z: &DMatrix<f64>, lambda: f64) -> Result<HatMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("ridge penalty must be nonnegative".into()));
    }
    spectral_hat(z, lambda, HatKind::Ridge)
}

/// `Z (Z'Z)^+ Z'` with its diagonal deleted.
pub fn projection_hat_deleted(z: &DMatrix<f64>) -> Result<HatMatrix> {
    spectral_hat(z, 0.0, HatKind::Projection)
}

/// Warning thresholds for [`design_diagnostics`].
pub const RATIO_FLOOR: f64 = 0.01;
pub const ROW_COL_CEILING: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticFlags {
    pub row_norm_warn: bool,
    pub first_stage_warn: bool,
    pub eig_warn: bool,
    pub row_col_warn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    /// Quantile level in (0, 100).
    pub q: f64,
    /// q-th quantile over max of `sum_{j != i} h_ij^2`.
    pub leverage_ratio: f64,
    /// q-th quantile over max of `(sum_{j != i} h_ij r_j)^2`, first endogenous column.
    pub first_stage_ratio: f64,
    /// Minimum of the first-stage ratio across endogenous columns.
    pub first_stage_ratio_min: f64,
    /// `max_i sum_{j != i} h_ji^2 / max_i sum_{j != i} h_ij^2`.
    pub row_col_ratio: f64,
    /// Share of `sum_k lambda_k(HH')^2` outside the leading eigenvalue.
    pub eig_ratio: f64,
    pub ratio_floor: f64,
    pub row_col_ceiling: f64,
    pub flags: DiagnosticFlags,
    /// Sum of |removed diagonal| after control conjugation, when applicable.
    pub removed_diagonal_abs_sum: Option<f64>,
}

fn ratio_to_max(values: &[f64], q: f64) -> f64 {
    let max = values.iter().fold(0.0_f64, |m, &v| m.max(v));
    if max <= 0.0 {
        return 0.0;
    }
    linalg::quantile_linear(values, q / 100.0) / max
}

pub fn design_diagnostics(h: &HatMatrix, r_hat: &DMatrix<f64>, q: f64) -> Result<DesignDiagnostics> {
    if !(q > 0.0 && q < 100.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 100), got {q}")));
    }
    if r_hat.nrows() != h.n() {
        return Err(Error::Dimension("r_hat rows differ from hat matrix size".into()));
    }
    let m = h.matrix();
    let row_sq: Vec<f64> = m.row_iter().map(|r| r.norm_squared()).collect();
    let col_sq: Vec<f64> = m.column_iter().map(|c| c.norm_squared()).collect();
    let leverage_ratio = ratio_to_max(&row_sq, q);
    let max_row = row_sq.iter().fold(0.0_f64, |a, &b| a.max(b));
    let max_col = col_sq.iter().fold(0.0_f64, |a, &b| a.max(b));
    let row_col_ratio = if max_row > 0.0 { max_col / max_row } else { 0.0 };

    let pi_hat = h.apply(r_hat);
    let fs: Vec<f64> = pi_hat
        .column_iter()
        .map(|c| {
            let sq: Vec<f64> = c.iter().map(|v| v * v).collect();
            ratio_to_max(&sq, q)
        })
        .collect();
    let first_stage_ratio = fs.first().copied().unwrap_or(0.0);
    let first_stage_ratio_min = fs.iter().copied().fold(f64::INFINITY, f64::min);

    // eigenvalues of HH' are the squared singular values of H
    let sv = singular_values(m);
    let fourth: Vec<f64> = sv.iter().map(|s| s.powi(4)).collect();
    let total: f64 = fourth.iter().sum();
    let top = fourth.iter().fold(0.0_f64, |a, &b| a.max(b));
    let eig_ratio = if total > 0.0 { ((total - top) / total).max(0.0) } else { 0.0 };

    Ok(DesignDiagnostics {
        q,
        leverage_ratio,
        first_stage_ratio,
        first_stage_ratio_min,
        row_col_ratio,
        eig_ratio,
        ratio_floor: RATIO_FLOOR,
        row_col_ceiling: ROW_COL_CEILING,
        flags: DiagnosticFlags {
            row_norm_warn: leverage_ratio < RATIO_FLOOR,
            first_stage_warn: first_stage_ratio_min < RATIO_FLOOR,
            eig_warn: eig_ratio < RATIO_FLOOR,
            row_col_warn: row_col_ratio > ROW_COL_CEILING,
        },
        removed_diagonal_abs_sum: h
            .removed_diagonal()
            .map(|d| d.iter().map(|v| v.abs()).sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn dof_at_zero_is_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_matrix(&mut rng, 20, 6);
        assert!((effective_dof(&z, 0.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn dof_vanishes_for_huge_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_matrix(&mut rng, 15, 4);
        let smax = linalg::max_singular_value(&z);
        assert!(effective_dof(&z, 1e12 * smax * smax) <= 1e-10 * 4.0);
    }

    #[test]
    fn dof_single_column_by_hand() {
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        assert!((effective_dof(&z, 3.0) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn dof_strictly_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(&mut rng, 12, 5);
        let grid: Vec<f64> = (0..40).map(|k| 1e-3 * 1.5_f64.powi(k)).collect();
        let d: Vec<f64> = std::iter::once(0.0).chain(grid).map(|l| effective_dof(&z, l)).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ridge_cap_not_binding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(&mut rng, 100, 10);
        let h = ridge_hat(&z, 0.2).unwrap();
        assert_eq!(h.ridge_penalty(), Some(0.0));
        let p = projection_hat_deleted(&z).unwrap();
        assert!((h.matrix() - p.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn ridge_cap_binding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(&mut rng, 10, 10);
        let h = ridge_hat(&z, 0.2).unwrap();
        let lam = h.ridge_penalty().unwrap();
        let d = effective_dof(&z, lam);
        assert!((2.0 - 1e-4..=2.0).contains(&d), "dof {d}");
        assert!(effective_dof(&z, lam * (1.0 - 1e-3)) > 2.0);
        assert!((h.dof() - d).abs() < 1e-12);
    }

    #[test]
    fn ridge_single_column_by_hand() {
        // sigma^2 = 9; dof(3) = 0.75 = 0.25 * 3, so lambda* = 3
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let h = ridge_hat(&z, 0.25).unwrap();
        assert!((h.ridge_penalty().unwrap() - 3.0).abs() < 1e-4);
        let m = h.matrix();
        assert!((m[(0, 1)] - 2.0 / 12.0).abs() < 1e-6);
        assert!((m[(0, 2)] - 2.0 / 12.0).abs() < 1e-6);
        assert!((m[(1, 2)] - 4.0 / 12.0).abs() < 1e-6);
        assert_eq!(m.diagonal().amax(), 0.0);
    }

    #[test]
    fn ridge_rejects_zero_instruments() {
        assert!(ridge_hat(&DMatrix::zeros(5, 2), 0.2).is_err());
    }

    #[test]
    fn projection_of_full_square_is_zero() {
        let z = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 3.0]);
        let h = projection_hat_deleted(&z).unwrap();
        assert!(h.matrix().amax() < 1e-12);
    }

    #[test]
    fn projection_on_constant() {
        let h = projection_hat_deleted(&DMatrix::from_element(4, 1, 1.0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 0.0 } else { 0.25 };
                assert!((h.matrix()[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn projection_invariant_to_column_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let z = random_matrix(&mut rng, 6, 2);
            let a = DMatrix::from_row_slice(2, 2, &[1.5, -0.3, 0.7, 2.0]);
            let h1 = projection_hat_deleted(&z).unwrap();
            let h2 = projection_hat_deleted(&(&z * a)).unwrap();
            assert!((h1.matrix() - h2.matrix()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn spectral_hats_symmetric_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = random_matrix(&mut rng, 30, 12);
        for h in [ridge_hat(&z, 0.2).unwrap(), projection_hat_deleted(&z).unwrap()] {
            let m = h.matrix();
            assert_eq!(m.diagonal().amax(), 0.0);
            assert!((m - m.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn low_rank_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_matrix(&mut rng, 40, 5);
        let h = ridge_hat(&z, 0.05).unwrap();
        assert!(h.factor.is_some());
        let m = random_matrix(&mut rng, 40, 3);
        assert!((h.apply(&m) - h.matrix() * &m).abs().max() < 1e-12);
    }

    #[test]
    fn custom_hat_cases() {
        let h = HatMatrix::custom(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(h.matrix().amax(), 0.0);
        let raw = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 3.0, 0.0, 4.0, 5.0, 6.0, 0.0]);
        assert_eq!(HatMatrix::custom(raw.clone()).unwrap().matrix(), &raw);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = random_matrix(&mut rng, 3, 3);
        let h = HatMatrix::custom(raw.clone()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(h.matrix()[(i, j)], raw[(i, j)]);
                }
            }
        }
        assert!(HatMatrix::custom(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn diagnostics_equal_rows() {
        let raw = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let h = HatMatrix::custom(raw).unwrap();
        let r = DMatrix::from_element(4, 1, 1.0);
        let d = design_diagnostics(&h, &r, 25.0).unwrap();
        assert!((d.leverage_ratio - 1.0).abs() < 1e-14);
        assert!((d.first_stage_ratio - 1.0).abs() < 1e-14);
        assert!((d.row_col_ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagnostics_rank_one() {
        let u = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0]);
        let h = HatMatrix::custom(&u * v.transpose()).unwrap();
        let d = design_diagnostics(&h, &DMatrix::from_element(4, 1, 1.0), 25.0).unwrap();
        assert!(d.eig_ratio.abs() < 1e-12);
        assert!(d.flags.eig_warn);
    }

    #[test]
    fn diagnostics_two_equal_singular_values() {
        // zero-diagonal 4x4 with singular values (s, s, 0, 0): s * [[0, I2],[0, 0]]
        let s = 1.7;
        let mut raw = DMatrix::zeros(4, 4);
        raw[(0, 2)] = s;
        raw[(1, 3)] = s;
        let h = HatMatrix::custom(raw).unwrap();
        let d = design_diagnostics(&h, &DMatrix::from_element(4, 1, 1.0), 25.0).unwrap();
        // eigenvalues of HH' are (s^2, s^2, 0, 0) -> s^4 / (2 s^4)
        assert!((d.eig_ratio - 0.5).abs() < 1e-12);
        for v in [d.leverage_ratio, d.first_stage_ratio, d.eig_ratio] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
