use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::IVDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamLabel};

/// Number of base instruments.
pub const BASE_DIM: usize = 10;

/// Difference of two unit exponentials: Laplace with location 0, scale 1.
pub fn laplace_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let a: f64 = rng.sample(Exp1);
    let b: f64 = rng.sample(Exp1);
    a - b
}

/// Lower Cholesky factor of the Toeplitz matrix `ratio^{-|l-k|}`.
pub fn toeplitz_cholesky(dim: usize, ratio: f64) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(dim, dim, |l, k| ratio.powi(-((l as i32 - k as i32).abs())));
    sigma
        .cholesky()
        .expect("geometric Toeplitz matrices are positive definite")
        .l()
}

/// `n` i.i.d. rows from `N(0, ratio^{-|l-k|})`, drawn row by row.
pub fn sample_toeplitz_normal(rng: &mut ChaCha8Rng, n: usize, dim: usize, ratio: f64) -> DMatrix<f64> {
    let l = toeplitz_cholesky(dim, ratio);
    let mut out = DMatrix::zeros(n, dim);
    let mut g = DVector::zeros(dim);
    for i in 0..n {
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out.set_row(i, &(&l * &g).transpose());
    }
    out
}

pub fn gen_base_instruments(n: usize, seed: u64) -> DMatrix<f64> {
    sample_toeplitz_normal(&mut stream_rng(seed, StreamLabel::Replication, 0), n, BASE_DIM, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Dz10,
    Dz30,
    Dz65,
    Dz75,
}

impl Regime {
    pub fn dz(self) -> usize {
        match self {
            Regime::Dz10 => 10,
            Regime::Dz30 => 30,
            Regime::Dz65 => 65,
            Regime::Dz75 => 75,
        }
    }
}

/// Base columns, squares, pairwise products `z_l z_k` for `l < k` in
/// lexicographic order.
pub fn quadratic_expansion(zbar: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let d = zbar.ncols();
    let mut cols: Vec<DVector<f64>> = zbar.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(zbar.column_iter().map(|c| c.map(|v| v * v)));
    for l in 0..d {
        for k in l + 1..d {
            cols.push(zbar.column(l).component_mul(&zbar.column(k)));
        }
    }
    cols
}

pub fn expand_regime(zbar: &DMatrix<f64>, regime: Regime) -> DMatrix<f64> {
    let cubes = || zbar.column_iter().map(|c| c.map(|v| v * v * v)).collect::<Vec<_>>();
    let cols: Vec<DVector<f64>> = match regime {
        Regime::Dz10 => return zbar.clone(),
        Regime::Dz30 => {
            let mut c: Vec<DVector<f64>> = zbar.column_iter().map(|c| c.into_owned()).collect();
            c.extend(zbar.column_iter().map(|c| c.map(|v| v * v)));
            c.extend(cubes());
            c
        }
        Regime::Dz65 => quadratic_expansion(zbar),
        Regime::Dz75 => {
            let mut c = quadratic_expansion(zbar);
            c.extend(cubes());
            c
        }
    };
    DMatrix::from_columns(&cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Strong,
    Weak,
    Intermediate,
}

impl Strength {
    /// First-stage scale `r_n`.
    pub fn scale(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Strength::Strong => 1.0,
            Strength::Weak => n.powf(-0.5),
            Strength::Intermediate => n.powf(-1.0 / 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorDist {
    Laplace,
    Gaussian,
}

impl ErrorDist {
    pub fn variance(self) -> f64 {
        match self {
            ErrorDist::Laplace => 2.0,
            ErrorDist::Gaussian => 1.0,
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ErrorDist::Laplace => laplace_sample(rng),
            ErrorDist::Gaussian => rng.sample(StandardNormal),
        }
    }
}

macro_rules! string_enum {
    ($ty:ident { $($var:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$var),)+
                    _ => Err(Error::Config(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_enum!(Regime { Dz10 => "dz10", Dz30 => "dz30", Dz65 => "dz65", Dz75 => "dz75" });
string_enum!(Strength { Strong => "strong", Weak => "weak", Intermediate => "intermediate" });
string_enum!(ErrorDist { Laplace => "laplace", Gaussian => "gaussian" });
string_enum!(SimRho { Lasso => "lasso", PostLasso => "post_lasso", Oracle => "oracle" });

/// Source of the slope used inside simulated tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimRho {
    Lasso,
    PostLasso,
    /// Closed-form conditional slope of the design.
    Oracle,
}

/// Knobs of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub n: usize,
    pub regime: Regime,
    pub rho1: f64,
    pub rho2: f64,
    pub strength: Strength,
    /// One entry per endogenous variable (one or two).
    pub beta_true: Vec<f64>,
    pub reps: u64,
    pub draws: usize,
    pub tests: Vec<crate::inference::TestKind>,
    pub seed: u64,
    pub errors: ErrorDist,
    pub rho: SimRho,
    pub dof_fraction: f64,
    pub cv_folds: usize,
    pub alpha: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        use crate::inference::{TauRule, TestKind};
        Self {
            n: 200,
            regime: Regime::Dz10,
            rho1: 0.2,
            rho2: 0.3,
            strength: Strength::Weak,
            beta_true: vec![1.0],
            reps: 100,
            draws: 1000,
            tests: vec![
                TestKind::Jk,
                TestKind::SupScore,
                TestKind::Thresholding(TauRule::Quantile(0.75)),
            ],
            seed: 0,
            errors: ErrorDist::Laplace,
            rho: SimRho::Lasso,
            dof_fraction: 0.2,
            cv_folds: 10,
            alpha: 0.05,
        }
    }
}

impl SimulationSpec {
    pub fn dx(&self) -> usize {
        self.beta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if !(1..=2).contains(&self.dx()) {
            return Err(Error::InvalidArgument("the design supports one or two endogenous variables".into()));
        }
        if self.n <= self.regime.dz() + 1 {
            return Err(Error::InvalidArgument(format!(
                "n = {} is too small for {} instruments",
                self.n,
                self.regime.dz()
            )));
        }
        if self.tests.is_empty() {
            return Err(Error::InvalidArgument("no tests requested".into()));
        }
        Ok(())
    }
}

/// Population quantities behind one simulated dataset.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub zbar: DMatrix<f64>,
    /// True first stage, n x d_x.
    pub pi: DMatrix<f64>,
    pub eps: DVector<f64>,
    pub v: DMatrix<f64>,
    /// `1 + rho1 (z1^2 + z2^2 + z2 z3)`.
    pub scale: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub data: IVDataset,
    pub oracle: Oracle,
}

fn first_stage_block(zbar: &DMatrix<f64>, i: usize, cols: std::ops::Range<usize>) -> f64 {
    cols.map(|k| {
        let z = zbar[(i, k)];
        0.75 * z + 0.25 * z * z + 0.25 * z * z * z
    })
    .sum()
}

pub fn gen_dgp(spec: &SimulationSpec, rep: u64) -> Result<SimDraw> {
    spec.validate()?;
    let n = spec.n;
    let dx = spec.dx();
    let mut rng = stream_rng(spec.seed, StreamLabel::Replication, rep);
    let zbar = sample_toeplitz_normal(&mut rng, n, BASE_DIM, 2.0);
    let e1: Vec<f64> = (0..n).map(|_| spec.errors.sample(&mut rng)).collect();
    let e_rest: Vec<Vec<f64>> = (0..dx)
        .map(|_| (0..n).map(|_| spec.errors.sample(&mut rng)).collect())
        .collect();

    let rn = spec.strength.scale(n);
    let c = (1.0 - spec.rho2).powi(2);
    let mut scale = DVector::zeros(n);
    let mut eps = DVector::zeros(n);
    let mut pi = DMatrix::zeros(n, dx);
    let mut v = DMatrix::zeros(n, dx);
    for i in 0..n {
        let (z1, z2, z3) = (zbar[(i, 0)], zbar[(i, 1)], zbar[(i, 2)]);
        scale[i] = 1.0 + spec.rho1 * (z1 * z1 + z2 * z2 + z2 * z3);
        eps[i] = scale[i] * e1[i];
        for l in 0..dx {
            pi[(i, l)] = rn * first_stage_block(&zbar, i, 5 * l..5 * l + 5);
            v[(i, l)] = spec.rho2 * (1.0 + zbar[(i, l)]) * eps[i] + c * e_rest[l][i];
        }
    }
    let x = &pi + &v;
    let y = &x * DVector::from_column_slice(&spec.beta_true) + &eps;
    let z = expand_regime(&zbar, spec.regime);
    let data = IVDataset::without_controls(y, x, z)?;
    Ok(SimDraw {
        data,
        oracle: Oracle {
            zbar,
            pi,
            eps,
            v,
            scale,
        },
    })
}

impl SimDraw {
    /// Conditional slope `Cov(x, eps(beta0) | z) / Var(eps(beta0) | z)` of
    /// the design, evaluated at every observation.
    pub fn true_rho(&self, spec: &SimulationSpec, beta0: &[f64]) -> DMatrix<f64> {
        let dx = spec.dx();
        let n = self.data.n();
        let s2 = spec.errors.variance();
        let c2 = (1.0 - spec.rho2).powi(4) * s2;
        let delta: Vec<f64> = spec.beta_true.iter().zip(beta0).map(|(b, b0)| b - b0).collect();
        let mut out = DMatrix::zeros(n, dx);
        for i in 0..n {
            let var_eps = self.oracle.scale[i].powi(2) * s2;
            let a: Vec<f64> = (0..dx).map(|l| spec.rho2 * (1.0 + self.oracle.zbar[(i, l)])).collect();
            // Sigma_ve = a var_eps, Sigma_vv = a a' var_eps + c2 I
            let ad: f64 = a.iter().zip(&delta).map(|(x, y)| x * y).sum();
            let dd: f64 = delta.iter().map(|d| d * d).sum();
            let denom = var_eps * (1.0 + ad).powi(2) + c2 * dd;
            for l in 0..dx {
                let cov = a[l] * var_eps * (1.0 + ad) + c2 * delta[l];
                out[(i, l)] = cov / denom;
            }
        }
        out
    }
}
