//! Estimation of the conditional slope of each endogenous variable on the
//! null residual, and the partialled-out endogenous variables built from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PartialledData;
use crate::error::{Error, Result};
use crate::lasso::{self, Gram, LassoOptions};

/// Basis `b(z)` in which the slope is assumed approximately sparse.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BasisSpec {
    #[default]
    InstrumentsPlusIntercept,
    InstrumentsOnly,
    /// Precomputed n x d_b expansion.
    Custom(DMatrix<f64>),
}

impl BasisSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BasisSpec::InstrumentsPlusIntercept => "instruments_plus_intercept",
            BasisSpec::InstrumentsOnly => "instruments_only",
            BasisSpec::Custom(_) => "custom",
        }
    }

    pub fn evaluate(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let b = match self {
            BasisSpec::InstrumentsPlusIntercept => z.clone().insert_column(0, 1.0),
            BasisSpec::InstrumentsOnly => z.clone(),
            BasisSpec::Custom(b) => {
                if b.nrows() != z.nrows() {
                    return Err(Error::Dimension(format!(
                        "custom basis has {} rows, data has {}",
                        b.nrows(),
                        z.nrows()
                    )));
                }
                b.clone()
            }
        };
        if b.ncols() == 0 {
            return Err(Error::InvalidArgument("basis has no columns".into()));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("basis has non-finite values".into()));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvFolds {
    KFold(usize),
    LeaveOneOut,
}

impl Default for CvFolds {
    fn default() -> Self {
        CvFolds::KFold(10)
    }
}

impl CvFolds {
    pub fn count(self, n: usize) -> usize {
        match self {
            CvFolds::KFold(k) => k,
            CvFolds::LeaveOneOut => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    CrossValidated(CvFolds),
    Fixed(f64),
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::CrossValidated(CvFolds::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum RhoMethod {
    #[default]
    Lasso,
    PostLasso,
    /// Caller-supplied n x d_x matrix of `rho_l(z_i)`.
    Known(DMatrix<f64>),
}

impl RhoMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RhoMethod::Lasso => "lasso",
            RhoMethod::PostLasso => "post_lasso",
            RhoMethod::Known(_) => "known",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RhoOptions {
    pub basis: BasisSpec,
    pub method: RhoMethod,
    pub lambda: LambdaRule,
    /// Seed for the cross-validation fold permutation.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoComponent {
    pub phi: Vec<f64>,
    pub support: Vec<usize>,
    /// Penalty used; absent for known slopes or when every penalty gives zero.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoModel {
    pub method: &'static str,
    pub basis: &'static str,
    pub components: Vec<RhoComponent>,
    #[serde(skip)]
    pub rho_values: DMatrix<f64>,
    #[serde(skip)]
    pub r_hat: DMatrix<f64>,
}

/// `y - X beta0`.
pub fn null_residuals(y: &DVector<f64>, x: &DMatrix<f64>, beta0: &[f64]) -> Result<DVector<f64>> {
    if x.nrows() != y.len() || x.ncols() != beta0.len() {
        return Err(Error::Dimension(format!(
            "beta0 has length {}, X is {}x{}, y has {} rows",
            beta0.len(),
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    Ok(y - x * DVector::from_column_slice(beta0))
}

/// `x - rho .* eps`, column by column.
pub fn partial_out_rho(x: &DMatrix<f64>, rho_values: &DMatrix<f64>, eps: &DVector<f64>) -> DMatrix<f64> {
    let mut r = x.clone();
    for l in 0..x.ncols() {
        for i in 0..x.nrows() {
            r[(i, l)] -= rho_values[(i, l)] * eps[i];
        }
    }
    r
}

pub fn estimate_rho(data: &PartialledData, beta0: &[f64], opts: &RhoOptions) -> Result<RhoModel> {
    let eps = null_residuals(&data.y, &data.x, beta0)?;
    estimate_rho_with_residuals(data, &eps, opts)
}

pub(crate) fn estimate_rho_with_residuals(
    data: &PartialledData,
    eps: &DVector<f64>,
    opts: &RhoOptions,
) -> Result<RhoModel> {
    let (n, dx) = (data.n(), data.dx());
    if let RhoMethod::Known(rho) = &opts.method {
        if rho.nrows() != n || rho.ncols() != dx {
            return Err(Error::Dimension(format!(
                "known rho is {}x{}, expected {n}x{dx}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("known rho has non-finite values".into()));
        }
        return Ok(RhoModel {
            method: opts.method.name(),
            basis: opts.basis.name(),
            components: vec![
                RhoComponent {
                    phi: Vec::new(),
                    support: Vec::new(),
                    lambda: None,
                };
                dx
            ],
            r_hat: partial_out_rho(&data.x, rho, eps),
            rho_values: rho.clone(),
        });
    }

    let basis = opts.basis.evaluate(&data.z)?;
    let mut design = basis.clone();
    for (mut row, &e) in design.row_iter_mut().zip(eps.iter()) {
        row *= e;
    }
    let lasso_opts = LassoOptions::default();
    let mut components = Vec::with_capacity(dx);
    let mut rho_values = DMatrix::zeros(n, dx);
    for l in 0..dx {
        let response = data.x.column(l).into_owned();
        let gram = Gram::new(&response, &design);
        let lambda = if gram.lambda_max() == 0.0 {
            None
        } else {
            match opts.lambda {
                LambdaRule::Fixed(v) => Some(v),
                LambdaRule::CrossValidated(folds) => {
                    let k = folds.count(n);
                    lasso::cross_validate_path(&response, &design, k, opts.seed)?
                        .map(|p| p.best_lambda())
                }
            }
        };
        let mut phi = match lambda {
            Some(lam) => gram.fit(lam, &lasso_opts)?.coef,
            None => DVector::zeros(design.ncols()),
        };
        if matches!(opts.method, RhoMethod::PostLasso) {
            let support = lasso::support_of(&phi);
            if support.len() < n {
                phi = lasso::post_lasso_refit(&response, &design, &support)?;
            }
        }
        rho_values.set_column(l, &(&basis * &phi));
        components.push(RhoComponent {
            support: lasso::support_of(&phi),
            phi: phi.iter().copied().collect(),
            lambda,
        });
    }
    Ok(RhoModel {
        method: opts.method.name(),
        basis: opts.basis.name(),
        components,
        r_hat: partial_out_rho(&data.x, &rho_values, eps),
        rho_values,
    })
}
