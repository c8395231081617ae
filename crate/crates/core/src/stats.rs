//! Test statistics: jackknife K, sup-score, conditioning and Anderson-Rubin.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hat::HatMatrix;

/// Relative eigenvalue cutoff for a singular JK denominator.
pub const SING_TOL: f64 = 1e-10;

/// Leave-one-out first-stage fits.
#[derive(Debug, Clone)]
pub struct FirstStage {
    /// `sum_{j != i} h_ij r_j`.
    pub pi_hat: DMatrix<f64>,
    /// `eps_i * pi_hat_i`.
    pub pi_eps: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticValue {
    pub value: f64,
    pub degenerate: bool,
    pub extras: BTreeMap<String, f64>,
}

impl StatisticValue {
    fn plain(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
            extras: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.extras.insert(key.to_string(), v);
        self
    }
}

pub fn first_stage(h: &HatMatrix, r_hat: &DMatrix<f64>, eps: &DVector<f64>) -> Result<FirstStage> {
    if r_hat.nrows() != h.n() || eps.len() != h.n() {
        return Err(Error::Dimension(format!(
            "hat matrix is {0}x{0}, r_hat has {1} rows, eps has {2}",
            h.n(),
            r_hat.nrows(),
            eps.len()
        )));
    }
    let pi_hat = h.apply(r_hat);
    let mut pi_eps = pi_hat.clone();
    for (mut row, &e) in pi_eps.row_iter_mut().zip(eps.iter()) {
        row *= e;
    }
    Ok(FirstStage { pi_hat, pi_eps })
}

/// `eps' Pi (Pi_eps' Pi_eps)^{-1} Pi' eps`, zero when the denominator is
/// numerically singular.
pub fn jk_statistic(eps: &DVector<f64>, fs: &FirstStage, sing_tol: f64) -> StatisticValue {
    let d = fs.pi_eps.tr_mul(&fs.pi_eps);
    let eig = d.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if !(lmin > sing_tol * lmax.max(1.0)) {
        return StatisticValue {
            value: 0.0,
            degenerate: true,
            extras: BTreeMap::new(),
        }
        .with("lambda_min", lmin)
        .with("lambda_max", lmax);
    }
    let num = fs.pi_hat.tr_mul(eps);
    let value = match d.cholesky() {
        Some(ch) => num.dot(&ch.solve(&num)),
        None => {
            let inv_eig = eig.eigenvalues.map(|v| 1.0 / v);
            let w = eig.eigenvectors.tr_mul(&num);
            w.component_mul(&w).dot(&inv_eig)
        }
    };
    StatisticValue::plain(value.max(0.0))
        .with("lambda_min", lmin)
        .with("lambda_max", lmax)
}

/// The single-endogenous form `(sum eps_i Pi_i)^2 / sum eps_i^2 Pi_i^2`.
pub fn jk_statistic_scalar(eps: &DVector<f64>, pi_hat: &DVector<f64>) -> f64 {
    let num = eps.dot(pi_hat);
    let den: f64 = eps.iter().zip(pi_hat.iter()).map(|(e, p)| e * e * p * p).sum();
    num * num / den
}

fn instrument_norms(z: &DMatrix<f64>) -> Result<Vec<f64>> {
    z.column_iter()
        .enumerate()
        .map(|(j, c)| {
            let s = c.norm();
            if s > 0.0 {
                Ok(s)
            } else {
                Err(Error::ZeroInstrument(j))
            }
        })
        .collect()
}

/// Columns of `z` scaled to unit Euclidean norm.
pub(crate) fn normalized_instruments(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norms = instrument_norms(z)?;
    let mut out = z.clone();
    for (mut col, s) in out.column_iter_mut().zip(norms) {
        col /= s;
    }
    Ok(out)
}

/// `max_l |sum_i eps_i z_li| / |z_l|`.
pub fn sup_score(eps: &DVector<f64>, z: &DMatrix<f64>) -> Result<StatisticValue> {
    if z.nrows() != eps.len() {
        return Err(Error::Dimension("instrument rows differ from residual length".into()));
    }
    let zn = normalized_instruments(z)?;
    Ok(StatisticValue::plain(zn.tr_mul(eps).amax()))
}

/// Row norms of `H` with the indices of zero rows.
pub(crate) fn row_norms_checked(h: &HatMatrix) -> Result<(Vec<f64>, usize)> {
    let norms = h.row_norms();
    let zero = norms.iter().filter(|&&s| s == 0.0).count();
    if zero == norms.len() {
        return Err(Error::ZeroHatRows);
    }
    Ok((norms, zero))
}

/// `min_l max_i |pi_li| / |h_i|` over rows with nonzero norm.
pub(crate) fn conditioning_from_fit(pi: &DMatrix<f64>, norms: &[f64]) -> f64 {
    pi.column_iter()
        .map(|col| {
            col.iter()
                .zip(norms)
                .filter(|(_, &s)| s > 0.0)
                .map(|(p, s)| p.abs() / s)
                .fold(0.0_f64, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn conditioning_statistic(h: &HatMatrix, r_hat: &DMatrix<f64>) -> Result<StatisticValue> {
    if r_hat.nrows() != h.n() {
        return Err(Error::Dimension("r_hat rows differ from hat matrix size".into()));
    }
    let (norms, excluded) = row_norms_checked(h)?;
    let pi = h.apply(r_hat);
    Ok(StatisticValue::plain(conditioning_from_fit(&pi, &norms)).with("excluded_rows", excluded as f64))
}

/// `(n - d_z)/d_z * eps'P eps / eps'M eps`.
pub fn anderson_rubin(eps: &DVector<f64>, z: &DMatrix<f64>) -> Result<StatisticValue> {
    let (n, dz) = (z.nrows(), z.ncols());
    if eps.len() != n {
        return Err(Error::Dimension("instrument rows differ from residual length".into()));
    }
    if dz == 0 || dz >= n {
        return Err(Error::InvalidArgument(format!("Anderson-Rubin needs 0 < d_z < n, got d_z = {dz}, n = {n}")));
    }
    let svd = z.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..dz)
        .filter(|&k| svd.singular_values[k] > smax * crate::linalg::RANK_TOL)
        .collect();
    let proj = u.select_columns(&keep).tr_mul(eps).norm_squared();
    let total = eps.norm_squared();
    let resid = total - proj;
    if !(resid > 1e-12 * total) {
        return Err(Error::ZeroResidual);
    }
    let value = (n - dz) as f64 / dz as f64 * proj / resid;
    Ok(StatisticValue::plain(value)
        .with("df1", dz as f64)
        .with("df2", (n - dz) as f64))
}
