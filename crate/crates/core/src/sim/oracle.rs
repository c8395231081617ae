//! Infeasible diagnostics available only when the design is known.

use nalgebra::DMatrix;

use super::dgp::{SimDraw, SimulationSpec};
use crate::error::{Error, Result};
use crate::hat::HatMatrix;
use crate::rho;

/// `offset^2 (sum Pi_i PiHat_i)^2 / sum var_eta_i PiHat_i^2`.
pub fn oracle_noncentrality(pi: &[f64], pi_hat: &[f64], var_eta: &[f64], offset: f64) -> Result<f64> {
    if pi.len() != pi_hat.len() || pi.len() != var_eta.len() {
        return Err(Error::Dimension("noncentrality inputs differ in length".into()));
    }
    let num: f64 = pi.iter().zip(pi_hat).map(|(a, b)| a * b).sum();
    let den: f64 = var_eta.iter().zip(pi_hat).map(|(v, p)| v * p * p).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("noncentrality"));
    }
    Ok(offset * offset * num * num / den)
}

/// First stage built from the true slope, `H (x - rho(z) eps(beta0))`.
pub fn infeasible_first_stage(h: &HatMatrix, draw: &SimDraw, spec: &SimulationSpec, beta0: &[f64]) -> Result<DMatrix<f64>> {
    let eps = rho::null_residuals(draw.data.y(), draw.data.x(), beta0)?;
    let r = rho::partial_out_rho(draw.data.x(), &draw.true_rho(spec, beta0), &eps);
    Ok(h.apply(&r))
}

/// Monte Carlo local power index over replications.
///
/// `pis[r]` and `pi_hats[r]` are the n x d_x true and infeasible first stages
/// of replication `r`. The scale of column `l` is
/// `s_l^{-2} = max_i mean_r pi_hat[r]_{il}^2`, and the index is
/// `sum_l mean_r (s_l / sqrt(n) sum_i pi_hat[r]_{il} Pi[r]_i' offset)^2`.
pub fn local_power_index(pis: &[DMatrix<f64>], pi_hats: &[DMatrix<f64>], offset: &[f64]) -> Result<f64> {
    if pis.is_empty() || pis.len() != pi_hats.len() {
        return Err(Error::Dimension("need matching, nonempty replication lists".into()));
    }
    let (n, dx) = pi_hats[0].shape();
    if offset.len() != dx
        || pis.iter().chain(pi_hats).any(|m| m.shape() != (n, dx))
    {
        return Err(Error::Dimension("first-stage shapes disagree".into()));
    }
    let reps = pis.len() as f64;
    let off = nalgebra::DVector::from_column_slice(offset);
    let mut total = 0.0;
    for l in 0..dx {
        let max_ms = (0..n)
            .map(|i| pi_hats.iter().map(|p| p[(i, l)] * p[(i, l)]).sum::<f64>() / reps)
            .fold(0.0_f64, f64::max);
        if max_ms == 0.0 {
            continue;
        }
        let s = max_ms.powf(-0.5);
        let mean_sq = pis
            .iter()
            .zip(pi_hats)
            .map(|(pi, ph)| {
                let shift = pi * &off;
                let t = s / (n as f64).sqrt() * ph.column(l).dot(&shift);
                t * t
            })
            .sum::<f64>()
            / reps;
        total += mean_sq;
    }
    Ok(total)
}
