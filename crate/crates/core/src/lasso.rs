//! l1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is `(1/n) |y - D phi|^2 + lambda |phi|_1`. All work happens on
//! the normalized Gram form `(D'D/n, D'y/n, y'y/n)`, so cross-validation folds
//! can be solved from a Gram downdate instead of refactoring the design.
//! Exact coordinate minimization is invariant to column scaling, so iterates
//! coincide with those of the standardized problem mapped back to the original
//! scale; the stopping rule measures changes on the standardized scale.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{stream_rng, StreamLabel};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_KKT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;
pub const GRID_POINTS: usize = 100;
/// Smallest grid penalty as a fraction of `lambda_max`.
pub const GRID_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop when the largest standardized coefficient change in a sweep is
    /// below `tol` times the root mean square of the response.
    pub tol: f64,
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    /// Once the sign pattern settles, jump to the exact minimizer by an
    /// active-set search; falls back to plain sweeps if that fails.
    pub active_set: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            kkt_tol: DEFAULT_KKT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            active_set: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coef: DVector<f64>,
    pub sweeps: usize,
    /// Largest violation of the optimality conditions at `coef`.
    pub kkt_violation: f64,
    pub converged: bool,
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn rhs_c(c: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    DVector::from_iterator(support.len(), support.iter().map(|&j| c[j]))
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Normalized sufficient statistics of a least-squares problem.
#[derive(Debug, Clone)]
pub(crate) struct Gram {
    g: DMatrix<f64>,
    c: DVector<f64>,
    yy: f64,
}

impl Gram {
    pub(crate) fn new(response: &DVector<f64>, design: &DMatrix<f64>) -> Self {
        let n = response.len() as f64;
        Self {
            g: design.tr_mul(design) / n,
            c: design.tr_mul(response) / n,
            yy: response.norm_squared() / n,
        }
    }

    fn from_sums(g: DMatrix<f64>, c: DVector<f64>, yy: f64, n: usize) -> Self {
        let n = n as f64;
        Self {
            g: g / n,
            c: c / n,
            yy: yy / n,
        }
    }

    pub(crate) fn lambda_max(&self) -> f64 {
        2.0 * self.c.amax()
    }

    fn kkt_violation(&self, phi: &DVector<f64>, q: &DVector<f64>, lambda: f64) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..phi.len() {
            let grad = -2.0 * (self.c[j] - q[j]);
            let v = if phi[j] == 0.0 {
                (grad.abs() - lambda).max(0.0)
            } else {
                (grad + lambda * phi[j].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Feature-sign active-set search started from `phi`: repeatedly solves the
    /// stationarity equations for the current sign pattern, backtracks to sign
    /// changes, and adds the worst violator. Returns the minimizer once every
    /// KKT condition holds, or `None` when the active block is singular or the
    /// iteration budget runs out.
    fn active_set_solution(&self, phi: &DVector<f64>, lambda: f64, kkt_tol: f64) -> Option<(DVector<f64>, f64)> {
        let p = phi.len();
        let mut x = phi.clone();
        let mut theta: Vec<f64> = x.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
        let add_tol = 0.1 * kkt_tol;
        for _ in 0..(10 * p + 100) {
            let support: Vec<usize> = (0..p).filter(|&j| theta[j] != 0.0).collect();
            let grad = (&self.g * &x - &self.c) * 2.0;
            let on_support_ok = support.iter().all(|&j| (grad[j] + lambda * theta[j]).abs() <= add_tol);
            if on_support_ok {
                let worst = (0..p)
                    .filter(|&j| theta[j] == 0.0)
                    .map(|j| (j, grad[j].abs()))
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match worst {
                    Some((j, g)) if g > lambda + add_tol => {
                        theta[j] = -grad[j].signum();
                        continue;
                    }
                    _ => {
                        let q = &self.g * &x;
                        let v = self.kkt_violation(&x, &q, lambda);
                        return (v <= kkt_tol).then_some((x, v));
                    }
                }
            }
            let g_aa = self.g.select_rows(&support).select_columns(&support);
            let rhs = DVector::from_iterator(
                support.len(),
                support.iter().map(|&j| self.c[j] - 0.5 * lambda * theta[j]),
            );
            let target = g_aa.clone().cholesky()?.solve(&rhs);
            if target.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let xa = DVector::from_iterator(support.len(), support.iter().map(|&j| x[j]));
            let d = &target - &xa;
            let gx = &g_aa * &xa;
            let gd = &g_aa * &d;
            let (xgx, xgd, dgd) = (xa.dot(&gx), xa.dot(&gd), d.dot(&gd));
            let (cx, cd) = (rhs_c(&self.c, &support).dot(&xa), rhs_c(&self.c, &support).dot(&d));
            // objective along x + t d
            let along = |t: f64| {
                let l1: f64 = xa.iter().zip(d.iter()).map(|(a, b)| (a + t * b).abs()).sum();
                xgx + 2.0 * t * xgd + t * t * dgd - 2.0 * (cx + t * cd) + lambda * l1
            };
            let mut best_t = 1.0;
            let mut best_f = along(1.0);
            let mut crossing = None;
            for k in 0..support.len() {
                let (from, to) = (xa[k], target[k]);
                if from != 0.0 && from.signum() != to.signum() {
                    let t = from / (from - to);
                    let f = along(t);
                    if f < best_f {
                        best_f = f;
                        best_t = t;
                        crossing = Some(k);
                    }
                }
            }
            let mut next = x.clone();
            for (k, &j) in support.iter().enumerate() {
                next[j] = xa[k] + best_t * d[k];
            }
            if let Some(k) = crossing {
                next[support[k]] = 0.0;
            }
            x = next;
            for j in 0..p {
                theta[j] = if x[j] == 0.0 { 0.0 } else { x[j].signum() };
            }
        }
        None
    }

    pub(crate) fn solve(
        &self,
        lambda: f64,
        warm: Option<&DVector<f64>>,
        opts: &LassoOptions,
        certify: bool,
    ) -> LassoFit {
        let p = self.c.len();
        let mut phi = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        let mut q = &self.g * &phi;
        let scale = self.yy.sqrt();
        if scale == 0.0 {
            return LassoFit {
                coef: DVector::zeros(p),
                sweeps: 0,
                kkt_violation: 0.0,
                converged: true,
            };
        }
        let thresh = opts.tol * scale;
        let diag: Vec<f64> = self.g.diagonal().iter().copied().collect();
        let half = 0.5 * lambda;
        let mut active_only = false;
        #[cfg(debug_assertions)]
        let mut last_obj = f64::INFINITY;

        let mut stable = 0usize;
        let mut next_try = 0usize;
        for sweep in 1..=opts.max_sweeps {
            let signs_before: Vec<i8> = phi.iter().map(|v| sign_of(*v)).collect();
            let mut max_change = 0.0_f64;
            for j in 0..p {
                let a = diag[j];
                if a <= 0.0 || (active_only && phi[j] == 0.0) {
                    continue;
                }
                let rho = self.c[j] - q[j] + a * phi[j];
                let new = soft_threshold(rho, half) / a;
                let delta = new - phi[j];
                if delta != 0.0 {
                    q.axpy(delta, &self.g.column(j), 1.0);
                    phi[j] = new;
                    max_change = max_change.max(delta.abs() * a.sqrt());
                }
            }
            #[cfg(debug_assertions)]
            {
                let obj = self.yy - 2.0 * self.c.dot(&phi) + phi.dot(&q) + lambda * phi.lp_norm(1);
                debug_assert!(
                    obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                    "lasso objective increased: {last_obj} -> {obj}"
                );
                last_obj = obj;
            }
            if phi.iter().zip(&signs_before).all(|(v, s)| sign_of(*v) == *s) {
                stable += 1;
            } else {
                stable = 0;
            }
            if opts.active_set && max_change >= thresh && stable >= 2 && sweep >= next_try {
                if let Some((exact, v)) = self.active_set_solution(&phi, lambda, opts.kkt_tol) {
                    return LassoFit {
                        coef: exact,
                        sweeps: sweep,
                        kkt_violation: v,
                        converged: true,
                    };
                }
                next_try = sweep + 50;
            }
            if max_change >= thresh {
                active_only = true;
                continue;
            }
            if active_only {
                active_only = false;
                continue;
            }
            if !certify {
                return LassoFit {
                    coef: phi,
                    sweeps: sweep,
                    kkt_violation: f64::NAN,
                    converged: true,
                };
            }
            q = &self.g * &phi;
            let v = self.kkt_violation(&phi, &q, lambda);
            if v <= opts.kkt_tol {
                return LassoFit {
                    coef: phi,
                    sweeps: sweep,
                    kkt_violation: v,
                    converged: true,
                };
            }
        }
        let q = &self.g * &phi;
        let v = self.kkt_violation(&phi, &q, lambda);
        LassoFit {
            coef: phi,
            sweeps: opts.max_sweeps,
            kkt_violation: v,
            converged: false,
        }
    }

    pub(crate) fn fit(&self, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lasso penalty must be positive, got {lambda}")));
        }
        let fit = self.solve(lambda, None, opts, true);
        if fit.converged {
            Ok(fit)
        } else {
            Err(Error::LassoNoConvergence {
                sweeps: fit.sweeps,
                kkt_violation: fit.kkt_violation,
            })
        }
    }
}

fn check_dims(response: &DVector<f64>, design: &DMatrix<f64>) -> Result<()> {
    if response.len() != design.nrows() {
        return Err(Error::Dimension(format!(
            "response has {} rows, design has {}",
            response.len(),
            design.nrows()
        )));
    }
    if response.is_empty() {
        return Err(Error::InvalidArgument("empty lasso problem".into()));
    }
    Ok(())
}

/// `max_j (2/n) |d_j' y|`: the smallest penalty with an all-zero solution.
pub fn lambda_max(response: &DVector<f64>, design: &DMatrix<f64>) -> f64 {
    let n = response.len() as f64;
    2.0 * design.tr_mul(response).amax() / n
}

pub fn lasso_fit(response: &DVector<f64>, design: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    Ok(lasso_fit_with(response, design, lambda, &LassoOptions::default())?.coef)
}

pub fn lasso_fit_with(
    response: &DVector<f64>,
    design: &DMatrix<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_dims(response, design)?;
    Gram::new(response, design).fit(lambda, opts)
}

/// Descending log-spaced grid from `lmax` to `GRID_RATIO * lmax`.
pub fn lambda_grid(lmax: f64) -> Vec<f64> {
    let last = (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|k| lmax * GRID_RATIO.powf(k as f64 / last))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    /// Mean out-of-fold squared error per grid point.
    pub cv_error: Vec<f64>,
    pub best: usize,
}

impl CvPath {
    pub fn best_lambda(&self) -> f64 {
        self.lambdas[self.best]
    }
}

/// Fold label per observation from a seeded permutation.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, StreamLabel::CvFolds, 0));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// K-fold cross-validation over the standard grid. Returns `None` when
/// `lambda_max` is zero, i.e. every penalty gives the zero solution.
pub fn cross_validate_path(
    response: &DVector<f64>,
    design: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<Option<CvPath>> {
    check_dims(response, design)?;
    let n = response.len();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("fold count must lie in [2, {n}], got {k}")));
    }
    let lmax = lambda_max(response, design);
    if lmax == 0.0 {
        return Ok(None);
    }
    let lambdas = lambda_grid(lmax);
    let fold = fold_assignment(n, k, seed);
    let g_tot = design.tr_mul(design);
    let c_tot = design.tr_mul(response);
    let yy_tot = response.norm_squared();
    let opts = LassoOptions::default();

    let per_fold: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let idx: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let d_out = design.select_rows(&idx);
            let y_out = response.select_rows(&idx);
            let gram = Gram::from_sums(
                &g_tot - d_out.tr_mul(&d_out),
                &c_tot - d_out.tr_mul(&y_out),
                yy_tot - y_out.norm_squared(),
                n - idx.len(),
            );
            let mut warm = DVector::zeros(design.ncols());
            lambdas
                .iter()
                .map(|&lam| {
                    warm = gram.solve(lam, Some(&warm), &opts, false).coef;
                    (&y_out - &d_out * &warm).norm_squared()
                })
                .collect()
        })
        .collect();

    let mut cv_error = vec![0.0; lambdas.len()];
    for sse in &per_fold {
        for (acc, v) in cv_error.iter_mut().zip(sse) {
            *acc += v;
        }
    }
    for v in &mut cv_error {
        *v /= n as f64;
    }
    // strict comparison keeps the earliest (largest) penalty on ties
    let mut best = 0;
    for (j, &e) in cv_error.iter().enumerate() {
        if e < cv_error[best] {
            best = j;
        }
    }
    Ok(Some(CvPath { lambdas, cv_error, best }))
}

/// CV-selected penalty; 0 when every penalty yields the zero solution.
pub fn cross_validate_lambda(
    response: &DVector<f64>,
    design: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<f64> {
    Ok(cross_validate_path(response, design, k, seed)?.map_or(0.0, |p| p.best_lambda()))
}

/// Unpenalized least squares on `support`, zeros elsewhere.
pub fn post_lasso_refit(
    response: &DVector<f64>,
    design: &DMatrix<f64>,
    support: &[usize],
) -> Result<DVector<f64>> {
    check_dims(response, design)?;
    let mut out = DVector::zeros(design.ncols());
    if support.is_empty() {
        return Ok(out);
    }
    if support.len() >= response.len() {
        return Err(Error::InvalidArgument(format!(
            "support of size {} needs more than {} observations",
            support.len(),
            response.len()
        )));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= design.ncols()) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range")));
    }
    let coef = linalg::lstsq(&design.select_columns(support), response);
    for (k, &j) in support.iter().enumerate() {
        out[j] = coef[k];
    }
    Ok(out)
}

pub fn support_of(phi: &DVector<f64>) -> Vec<usize> {
    (0..phi.len()).filter(|&j| phi[j] != 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn kkt_from_residual(y: &DVector<f64>, d: &DMatrix<f64>, phi: &DVector<f64>, lam: f64) -> f64 {
        let n = y.len() as f64;
        let res = y - d * phi;
        let g = d.tr_mul(&res) * (-2.0 / n);
        (0..phi.len())
            .map(|j| {
                if phi[j] == 0.0 {
                    (g[j].abs() - lam).max(0.0)
                } else {
                    (g[j] + lam * phi[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn active_set_agrees_with_plain_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let (n, p) = (60, 12 + trial);
            let base = gaussian(&mut rng, n, p);
            // strongly correlated columns, where plain sweeps are slow
            let common = gaussian(&mut rng, n, 1);
            let d = DMatrix::from_fn(n, p, |i, j| base[(i, j)] + 2.0 * common[(i, 0)]);
            let y = DVector::from_fn(n, |i, _| d[(i, 0)] - 0.5 * d[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
            let lam = lambda_max(&y, &d) * 0.01;
            let plain = LassoOptions {
                active_set: false,
                ..LassoOptions::default()
            };
            let a = lasso_fit_with(&y, &d, lam, &LassoOptions::default()).unwrap();
            let b = lasso_fit_with(&y, &d, lam, &plain).unwrap();
            assert!(kkt_from_residual(&y, &d, &a.coef, lam) <= 1e-6);
            let scale = 1.0 + b.coef.amax();
            assert!((&a.coef - &b.coef).amax() < 1e-4 * scale, "trial {trial}");
        }
    }

    #[test]
    fn zero_at_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = gaussian(&mut rng, 30, 8);
        let y = DVector::from_fn(30, |_, _| rng.sample(StandardNormal));
        let lmax = lambda_max(&y, &d);
        assert_eq!(lasso_fit(&y, &d, lmax).unwrap(), DVector::zeros(8));
        assert_eq!(lasso_fit(&y, &d, 3.0 * lmax).unwrap(), DVector::zeros(8));
    }

    #[test]
    fn univariate_closed_form() {
        let col = DMatrix::from_column_slice(5, 1, &[1.0, -2.0, 0.5, 3.0, 1.5]);
        let y = DVector::from_vec(vec![2.0, -3.0, 1.0, 4.0, 2.5]);
        let lam = 0.3;
        let n = 5.0;
        let cc: f64 = col.iter().map(|v| v * v).sum();
        let cy: f64 = col.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let ols = cy / cc;
        let expect = soft_threshold(ols, lam / 2.0 * n / cc);
        let got = lasso_fit(&y, &col, lam).unwrap();
        assert!((got[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_columns_decouple() {
        let d = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let y = DVector::from_vec(vec![3.0, 1.0, 2.5, -0.5]);
        let lam = 0.4;
        let got = lasso_fit(&y, &d, lam).unwrap();
        for j in 0..2 {
            let col = d.column(j);
            let cc = col.norm_squared();
            let expect = soft_threshold(col.dot(&y) / cc, lam / 2.0 * 4.0 / cc);
            assert!((got[j] - expect).abs() < 1e-8, "{j}: {} vs {expect}", got[j]);
        }
    }

    #[test]
    fn wide_design_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = gaussian(&mut rng, 20, 50);
        let y = DVector::from_fn(20, |_, _| rng.sample(StandardNormal));
        let lam = 0.05 * lambda_max(&y, &d);
        let fit = lasso_fit_with(&y, &d, lam, &LassoOptions::default()).unwrap();
        assert!(kkt_from_residual(&y, &d, &fit.coef, lam) <= 1e-6);
    }

    #[test]
    fn zero_column_gets_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = gaussian(&mut rng, 25, 4);
        d.column_mut(2).fill(0.0);
        let y = DVector::from_fn(25, |_, _| rng.sample(StandardNormal));
        let phi = lasso_fit(&y, &d, 0.01).unwrap();
        assert_eq!(phi[2], 0.0);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let d = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(lasso_fit(&y, &d, 0.0).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn cv_noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = gaussian(&mut rng, 100, 10);
        let mut star = DVector::zeros(10);
        star[1] = 2.0;
        star[6] = -1.0;
        let y = &d * &star;
        let path = cross_validate_path(&y, &d, 10, 9).unwrap().unwrap();
        let var = y.variance();
        assert!(path.cv_error[path.best] < 1e-6 * var);
    }

    #[test]
    fn cv_pure_noise_picks_heavy_penalty() {
        let mut hits = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let d = gaussian(&mut rng, 200, 10);
            let y = DVector::from_fn(200, |_, _| rng.sample(StandardNormal));
            let path = cross_validate_path(&y, &d, 10, seed).unwrap().unwrap();
            if path.best_lambda() >= 0.1 * path.lambdas[0] {
                hits += 1;
            }
        }
        assert!(hits >= 45, "only {hits}/50 seeds in the top decade");
    }

    #[test]
    fn loo_shares_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = gaussian(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |_, _| rng.sample(StandardNormal));
        let a = cross_validate_path(&y, &d, 10, 1).unwrap().unwrap();
        let b = cross_validate_path(&y, &d, 5, 1).unwrap().unwrap();
        assert_eq!(a.lambdas, b.lambdas);
        assert!(cross_validate_path(&y, &d, 11, 1).is_err());
    }

    #[test]
    fn cv_zero_response() {
        let d = DMatrix::from_element(6, 2, 1.0);
        let y = DVector::zeros(6);
        assert_eq!(cross_validate_lambda(&y, &d, 3, 0).unwrap(), 0.0);
    }

    #[test]
    fn refit_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = gaussian(&mut rng, 30, 3);
        let y = DVector::from_fn(30, |_, _| rng.sample(StandardNormal));
        assert_eq!(post_lasso_refit(&y, &d, &[]).unwrap(), DVector::zeros(3));
        // normal equations via an explicit inverse
        let full = post_lasso_refit(&y, &d, &[0, 1, 2]).unwrap();
        let ne = d.tr_mul(&d).try_inverse().unwrap() * d.tr_mul(&y);
        assert!((full - ne).amax() < 1e-10);
        let one = post_lasso_refit(&y, &d, &[1]).unwrap();
        let col = d.column(1);
        assert!((one[1] - col.dot(&y) / col.norm_squared()).abs() < 1e-12);
        assert_eq!((one[0], one[2]), (0.0, 0.0));
    }

    #[test]
    fn refit_recovers_sparse_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = gaussian(&mut rng, 40, 12);
        let mut star = DVector::zeros(12);
        star[0] = 1.5;
        star[4] = -0.7;
        star[9] = 3.0;
        let y = &d * &star;
        let phi = post_lasso_refit(&y, &d, &[0, 4, 9]).unwrap();
        assert!((phi - star).amax() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn certificate_holds(seed in any::<u64>(), n in 5usize..40, p in 1usize..60, frac in 0.01f64..1.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gaussian(&mut rng, n, p);
            let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let lam = frac * lambda_max(&y, &d);
            prop_assume!(lam > 0.0);
            let fit = lasso_fit_with(&y, &d, lam, &LassoOptions::default()).unwrap();
            prop_assert!(kkt_from_residual(&y, &d, &fit.coef, lam) <= 1e-6);
        }

        #[test]
        fn scale_equivariance(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gaussian(&mut rng, 30, 6);
            let y = DVector::from_fn(30, |_, _| rng.sample(StandardNormal));
            let lam = 0.2 * lambda_max(&y, &d);
            let a = lasso_fit(&y, &d, lam).unwrap();
            let b = lasso_fit(&(&y * c), &d, lam * c).unwrap();
            let tol = 1e-8 * c * (1.0 + a.amax());
            prop_assert!((a * c - b).amax() <= tol);
        }
    }
}
