//! Gaussian multiplier bootstrap for the sup-score and conditioning statistics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hat::HatMatrix;
use crate::linalg;
use crate::rng::{stream_rng, StreamLabel};
use crate::stats;

pub const DEFAULT_DRAWS: usize = 1000;
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub draws: usize,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    fn validate(&self) -> Result<()> {
        if self.draws < MIN_DRAWS {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs at least {MIN_DRAWS} draws, got {}",
                self.draws
            )));
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

/// n x B matrix whose column b holds the multipliers of draw b, taken from
/// its own stream so the result does not depend on scheduling.
pub fn multiplier_matrix(n: usize, draws: usize, seed: u64, label: StreamLabel) -> DMatrix<f64> {
    let mut data = vec![0.0; n * draws];
    if n > 0 {
        data.par_chunks_mut(n).enumerate().for_each(|(b, col)| {
            let mut rng = stream_rng(seed, label, b as u64);
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        });
    }
    DMatrix::from_vec(n, draws, data)
}

/// Upper `1 - theta` order statistic, `ceil((1 - theta) B)`-th smallest.
pub fn critical_value(draws: &mut [f64], theta: f64) -> f64 {
    linalg::upper_order_statistic(draws, 1.0 - theta)
}

/// Bootstrap replicates `max_l |sum_i e_i eps_i z_li| / |z_l|`.
pub fn sup_score_draws(eps: &DVector<f64>, z: &DMatrix<f64>, spec: &BootstrapSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if z.nrows() != eps.len() {
        return Err(Error::Dimension("instrument rows differ from residual length".into()));
    }
    let zn = stats::normalized_instruments(z)?;
    Ok(sup_score_draws_normalized(eps, &zn, spec))
}

pub(crate) fn sup_score_draws_normalized(eps: &DVector<f64>, zn: &DMatrix<f64>, spec: &BootstrapSpec) -> Vec<f64> {
    let mut w = multiplier_matrix(eps.len(), spec.draws, spec.seed, StreamLabel::SupScoreBootstrap);
    for (mut row, &e) in w.row_iter_mut().zip(eps.iter()) {
        row *= e;
    }
    let scores = zn.tr_mul(&w);
    scores.column_iter().map(|c| c.amax()).collect()
}

pub fn sup_score_critical(eps: &DVector<f64>, z: &DMatrix<f64>, theta: f64, spec: &BootstrapSpec) -> Result<f64> {
    check_theta(theta)?;
    let mut draws = sup_score_draws(eps, z, spec)?;
    Ok(critical_value(&mut draws, theta))
}

/// Bootstrap replicates of the conditioning statistic, with the same
/// multipliers shared across endogenous columns.
pub fn conditioning_draws(h: &HatMatrix, r_hat: &DMatrix<f64>, spec: &BootstrapSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if r_hat.nrows() != h.n() {
        return Err(Error::Dimension("r_hat rows differ from hat matrix size".into()));
    }
    let (norms, _) = stats::row_norms_checked(h)?;
    Ok(conditioning_draws_with_norms(h, r_hat, &norms, spec))
}

pub(crate) fn conditioning_draws_with_norms(
    h: &HatMatrix,
    r_hat: &DMatrix<f64>,
    norms: &[f64],
    spec: &BootstrapSpec,
) -> Vec<f64> {
    let e = multiplier_matrix(h.n(), spec.draws, spec.seed, StreamLabel::ConditioningBootstrap);
    let mut out = vec![f64::INFINITY; spec.draws];
    for l in 0..r_hat.ncols() {
        let mut m = e.clone();
        for (mut row, &r) in m.row_iter_mut().zip(r_hat.column(l).iter()) {
            row *= r;
        }
        let pi = h.apply(&m);
        for (b, col) in pi.column_iter().enumerate() {
            let c = col
                .iter()
                .zip(norms)
                .filter(|(_, &s)| s > 0.0)
                .map(|(p, s)| p.abs() / s)
                .fold(0.0_f64, f64::max);
            out[b] = out[b].min(c);
        }
    }
    out
}

pub fn conditioning_quantile(h: &HatMatrix, r_hat: &DMatrix<f64>, theta: f64, spec: &BootstrapSpec) -> Result<f64> {
    check_theta(theta)?;
    let mut draws = conditioning_draws(h, r_hat, spec)?;
    Ok(critical_value(&mut draws, theta))
}
