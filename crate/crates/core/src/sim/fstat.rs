//! Mechanical inflation of the first-stage F statistic after LASSO selection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{quadratic_expansion, sample_toeplitz_normal, BASE_DIM};
use crate::error::{Error, Result};
use crate::lasso::{self, Gram, LassoOptions};
use crate::linalg;
use crate::rng::{stream_rng, StreamLabel};

/// Classical first-stage F with an intercept:
/// `((SSR0 - SSR1) / k) / (SSR1 / (n - k - 1))`.
pub fn first_stage_f(x: &DVector<f64>, z: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = (z.nrows(), z.ncols());
    if k == 0 || n <= k + 1 {
        return Err(Error::InvalidArgument(format!("F statistic needs 0 < k < n - 1, got k = {k}, n = {n}")));
    }
    let design = z.clone().insert_column(0, 1.0);
    let coef = linalg::lstsq(&design, x);
    let ssr1 = (x - &design * coef).norm_squared();
    let mean = x.mean();
    let ssr0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if ssr1 <= 0.0 {
        return Err(Error::ZeroResidual);
    }
    Ok(((ssr0 - ssr1) / k as f64) / (ssr1 / (n - k - 1) as f64))
}

/// One draw of the demonstration design.
#[derive(Debug, Clone)]
pub struct FstatDraw {
    pub x: DVector<f64>,
    /// 10 base instruments.
    pub base: DMatrix<f64>,
    /// Base, squares and pairwise interactions (65 columns).
    pub expanded: DMatrix<f64>,
}

pub fn fstat_draw(n: usize, seed: u64, rep: u64) -> FstatDraw {
    let mut rng = stream_rng(seed, StreamLabel::Replication, rep);
    let base = sample_toeplitz_normal(&mut rng, n, BASE_DIM, 1.1);
    let coef = 0.7 / (n as f64).sqrt();
    let x = DVector::from_fn(n, |i, _| {
        let v: f64 = rng.sample(StandardNormal);
        coef * base.row(i).sum() + v
    });
    let expanded = DMatrix::from_columns(&quadratic_expansion(&base));
    FstatDraw { x, base, expanded }
}

fn standardize(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut c in out.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
        let s = (c.norm_squared() / c.len() as f64).sqrt();
        if s > 0.0 {
            c /= s;
        }
    }
    out
}

/// Column sets picked by walking the LASSO path downward from `lambda_max`:
/// for each target `k`, the support at the first penalty with at least `k`
/// active columns, cut back to the `k` largest coefficients on overshoot.
/// Columns are centred and scaled to unit variance first.
pub fn select_by_path(x: &DVector<f64>, z: &DMatrix<f64>, targets: &[usize]) -> Vec<Option<Vec<usize>>> {
    let zs = standardize(z);
    let mean = x.mean();
    let xc = x.map(|v| v - mean);
    let gram = Gram::new(&xc, &zs);
    let mut picked: Vec<Option<Vec<usize>>> = vec![None; targets.len()];
    let lmax = gram.lambda_max();
    if lmax == 0.0 {
        return picked;
    }
    let opts = LassoOptions::default();
    let mut warm = DVector::zeros(z.ncols());
    for lam in lasso::lambda_grid(lmax) {
        warm = gram.solve(lam, Some(&warm), &opts, false).coef;
        let support = lasso::support_of(&warm);
        for (slot, &k) in picked.iter_mut().zip(targets) {
            if slot.is_none() && support.len() >= k {
                let mut s = support.clone();
                s.sort_by(|&a, &b| warm[b].abs().total_cmp(&warm[a].abs()).then(a.cmp(&b)));
                s.truncate(k);
                s.sort_unstable();
                *slot = Some(s);
            }
        }
        if picked.iter().all(Option::is_some) {
            break;
        }
    }
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FstatRow {
    pub k: usize,
    /// Mean over replications where the path reached `k` columns.
    pub mean_f: Option<f64>,
    pub reps_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FstatTable {
    pub n: usize,
    pub reps: u64,
    pub seed: u64,
    pub true_instrument_f: f64,
    pub rows: Vec<FstatRow>,
}

impl FstatTable {
    pub fn mean_f(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).and_then(|r| r.mean_f)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "selected", "reps_used", "mean_f"])?;
        wtr.write_record([
            self.n.to_string(),
            "true10".to_string(),
            self.reps.to_string(),
            self.true_instrument_f.to_string(),
        ])?;
        for r in &self.rows {
            wtr.write_record([
                self.n.to_string(),
                r.k.to_string(),
                r.reps_used.to_string(),
                r.mean_f.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        wtr.flush().map_err(Error::io("<csv>"))?;
        Ok(())
    }
}

pub fn fstat_demo(n: usize, targets: &[usize], reps: u64, seed: u64) -> Result<FstatTable> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if let Some(&k) = targets.iter().find(|&&k| k == 0 || k > 65) {
        return Err(Error::InvalidArgument(format!("selected count {k} outside [1, 65]")));
    }
    if n <= 67 {
        return Err(Error::InvalidArgument(format!("n = {n} too small for 65 instruments")));
    }
    let per_rep: Vec<(f64, Vec<Option<f64>>)> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let d = fstat_draw(n, seed, r);
            let f_true = first_stage_f(&d.x, &d.base)?;
            let fs = select_by_path(&d.x, &d.expanded, targets)
                .into_iter()
                .map(|sel| sel.map(|s| first_stage_f(&d.x, &d.expanded.select_columns(&s))).transpose())
                .collect::<Result<Vec<_>>>()?;
            Ok((f_true, fs))
        })
        .collect::<Result<_>>()?;
    let true_instrument_f = per_rep.iter().map(|(f, _)| f).sum::<f64>() / reps as f64;
    let rows = targets
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let vals: Vec<f64> = per_rep.iter().filter_map(|(_, fs)| fs[j]).collect();
            FstatRow {
                k,
                mean_f: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                reps_used: vals.len() as u64,
            }
        })
        .collect();
    Ok(FstatTable {
        n,
        reps,
        seed,
        true_instrument_f,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_matches_direct_full_design() {
        let d = fstat_draw(300, 4, 0);
        let sel = select_by_path(&d.x, &d.expanded, &[65]);
        let s = sel[0].clone().expect("full path reaches every column");
        assert_eq!(s, (0..65).collect::<Vec<_>>());
        let via_path = first_stage_f(&d.x, &d.expanded.select_columns(&s)).unwrap();
        // oracle: normal equations on [1, Z]
        let design = d.expanded.clone().insert_column(0, 1.0);
        let beta = design.tr_mul(&design).cholesky().unwrap().solve(&design.tr_mul(&d.x));
        let ssr1 = (&d.x - &design * beta).norm_squared();
        let ssr0 = d.x.map(|v| v - d.x.mean()).norm_squared();
        let direct = ((ssr0 - ssr1) / 65.0) / (ssr1 / (300.0 - 66.0));
        assert!((via_path - direct).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn base_columns_reproduce_true_f() {
        let d = fstat_draw(200, 5, 3);
        let base_idx: Vec<usize> = (0..10).collect();
        let a = first_stage_f(&d.x, &d.expanded.select_columns(&base_idx)).unwrap();
        let b = first_stage_f(&d.x, &d.base).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_sizes() {
        let d = fstat_draw(200, 6, 0);
        let targets = [1, 5, 10, 20, 40];
        for (sel, &k) in select_by_path(&d.x, &d.expanded, &targets).iter().zip(&targets) {
            assert_eq!(sel.as_ref().unwrap().len(), k);
        }
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(fstat_demo(200, &[0], 2, 0).is_err());
        assert!(fstat_demo(200, &[66], 2, 0).is_err());
    }
}
