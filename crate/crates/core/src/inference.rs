//! Test decisions, the end-to-end testing pipeline and confidence sets by
//! test inversion.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bootstrap::{self, BootstrapSpec};
use crate::data::{self, PartialledData};
use crate::distributions::{chi2_quantile, chi2_sf, f_quantile, f_sf};
use crate::error::{Error, Result, Stage};
use crate::hat::{self, DesignDiagnostics, HatMatrix};
use crate::rho::{self, BasisSpec, LambdaRule, RhoMethod, RhoModel, RhoOptions};
use crate::stats::{self, StatisticValue};

/// How the thresholding cutoff for the conditioning statistic is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// Quantile at this level of the conditioning statistic's bootstrap law.
    Quantile(f64),
    Fixed(f64),
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Quantile(0.75)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestKind {
    Jk,
    SupScore,
    Thresholding(TauRule),
    AndersonRubin,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::Jk => f.write_str("jk"),
            TestKind::SupScore => f.write_str("sup_score"),
            TestKind::AndersonRubin => f.write_str("anderson_rubin"),
            TestKind::Thresholding(TauRule::Quantile(q)) if *q == 0.75 => f.write_str("thresholding"),
            TestKind::Thresholding(TauRule::Quantile(q)) => write!(f, "thresholding_q{q}"),
            TestKind::Thresholding(TauRule::Fixed(v)) => write!(f, "thresholding_fixed{v}"),
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown test kind `{s}`"));
        Ok(match s {
            "jk" => TestKind::Jk,
            "sup_score" | "sup-score" => TestKind::SupScore,
            "anderson_rubin" | "ar" => TestKind::AndersonRubin,
            "thresholding" => TestKind::Thresholding(TauRule::default()),
            _ => {
                if let Some(q) = s.strip_prefix("thresholding_q") {
                    let q: f64 = q.parse().map_err(|_| bad())?;
                    if !(q > 0.0 && q < 1.0) {
                        return Err(Error::Config(format!("tau quantile must lie in (0, 1), got {q}")));
                    }
                    TestKind::Thresholding(TauRule::Quantile(q))
                } else if let Some(v) = s.strip_prefix("thresholding_fixed") {
                    let v: f64 = v.parse().map_err(|_| bad())?;
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Config(format!("fixed tau must be a nonnegative number, got {v}")));
                    }
                    TestKind::Thresholding(TauRule::Fixed(v))
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl Serialize for TestKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Jk,
    SupScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: Option<f64>,
    pub reject: bool,
    pub alpha: f64,
    pub branch: Option<Branch>,
    pub conditioning_value: Option<f64>,
    pub tau: Option<f64>,
    /// The statistic's denominator was numerically singular.
    pub degenerate: bool,
}

impl TestResult {
    /// Statistic over critical value; comparable across tests and branches.
    pub fn normalized(&self) -> f64 {
        if self.statistic == 0.0 {
            0.0
        } else if self.critical_value > 0.0 {
            self.statistic / self.critical_value
        } else {
            f64::INFINITY
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Chi-squared calibration of the JK statistic.
pub fn jk_test(stat: &StatisticValue, dx: usize, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let k = dx as f64;
    let crit = chi2_quantile(1.0 - alpha, k);
    let (reject, p) = if stat.degenerate {
        (false, 1.0)
    } else {
        (stat.value > crit, chi2_sf(stat.value, k))
    };
    Ok(TestResult {
        kind: TestKind::Jk,
        statistic: stat.value,
        critical_value: crit,
        p_value: Some(p),
        reject,
        alpha,
        branch: None,
        conditioning_value: None,
        tau: None,
        degenerate: stat.degenerate,
    })
}

pub fn sup_score_test(stat: &StatisticValue, critical: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    Ok(TestResult {
        kind: TestKind::SupScore,
        statistic: stat.value,
        critical_value: critical,
        p_value: None,
        reject: stat.value > critical,
        alpha,
        branch: None,
        conditioning_value: None,
        tau: None,
        degenerate: false,
    })
}

pub fn anderson_rubin_test(stat: &StatisticValue, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (d1, d2) = match (stat.extras.get("df1"), stat.extras.get("df2")) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::InvalidArgument("Anderson-Rubin statistic lacks degrees of freedom".into())),
    };
    let crit = f_quantile(1.0 - alpha, d1, d2);
    Ok(TestResult {
        kind: TestKind::AndersonRubin,
        statistic: stat.value,
        critical_value: crit,
        p_value: Some(f_sf(stat.value, d1, d2)),
        reject: stat.value > crit,
        alpha,
        branch: None,
        conditioning_value: None,
        tau: None,
        degenerate: false,
    })
}

/// JK decision when `C >= tau`, sup-score decision otherwise.
pub fn thresholding_test(
    jk: &TestResult,
    ss_stat: &StatisticValue,
    ss_crit: f64,
    conditioning: &StatisticValue,
    tau: f64,
    rule: TauRule,
) -> TestResult {
    let c = conditioning.value;
    let mut out = if c >= tau {
        TestResult {
            branch: Some(Branch::Jk),
            ..jk.clone()
        }
    } else {
        TestResult {
            kind: TestKind::SupScore,
            statistic: ss_stat.value,
            critical_value: ss_crit,
            p_value: None,
            reject: ss_stat.value > ss_crit,
            alpha: jk.alpha,
            branch: Some(Branch::SupScore),
            conditioning_value: None,
            tau: None,
            degenerate: false,
        }
    };
    out.kind = TestKind::Thresholding(rule);
    out.p_value = None;
    out.conditioning_value = Some(c);
    out.tau = Some(tau);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum HatSpec {
    Ridge {
        dof_fraction: f64,
    },
    Projection,
    /// Raw n x n weights; the diagonal is dropped.
    Custom(Arc<DMatrix<f64>>),
}

impl Default for HatSpec {
    fn default() -> Self {
        HatSpec::Ridge {
            dof_fraction: DEFAULT_DOF_FRACTION,
        }
    }
}

impl HatSpec {
    pub fn build(&self, z: &DMatrix<f64>) -> Result<HatMatrix> {
        match self {
            HatSpec::Ridge { dof_fraction } => hat::ridge_hat(z, *dof_fraction),
            HatSpec::Projection => hat::projection_hat_deleted(z),
            HatSpec::Custom(m) => {
                if m.nrows() != z.nrows() {
                    return Err(Error::Dimension(format!(
                        "custom hat matrix is {}x{}, data has {} rows",
                        m.nrows(),
                        m.ncols(),
                        z.nrows()
                    )));
                }
                HatMatrix::custom((**m).clone())
            }
        }
    }
}

pub const DEFAULT_DOF_FRACTION: f64 = 0.2;

/// Everything a single test needs besides the data and the hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    pub hat: HatSpec,
    pub basis: BasisSpec,
    pub rho_method: RhoMethod,
    pub lambda: LambdaRule,
    pub draws: usize,
    pub seed: u64,
    pub sing_tol: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            hat: HatSpec::default(),
            basis: BasisSpec::default(),
            rho_method: RhoMethod::default(),
            lambda: LambdaRule::default(),
            draws: bootstrap::DEFAULT_DRAWS,
            seed: 0,
            sing_tol: stats::SING_TOL,
        }
    }
}

impl TestConfig {
    fn bootstrap(&self) -> BootstrapSpec {
        BootstrapSpec {
            draws: self.draws,
            seed: self.seed,
        }
    }

    fn rho_options(&self) -> RhoOptions {
        RhoOptions {
            basis: self.basis.clone(),
            method: self.rho_method.clone(),
            lambda: self.lambda,
            seed: self.seed,
        }
    }
}

/// Data with its hat matrix built once, ready to test many hypotheses.
#[derive(Debug, Clone)]
pub struct Pipeline {
    data: PartialledData,
    config: TestConfig,
    hat: HatMatrix,
    norms: Vec<f64>,
    z_normalized: std::result::Result<DMatrix<f64>, usize>,
}

impl Pipeline {
    pub fn new(data: PartialledData, config: TestConfig) -> Result<Self> {
        check_alpha(config.alpha)?;
        let mut hat = config.hat.build(&data.z).map_err(Error::at(Stage::HatMatrix))?;
        if data.dc() > 0 {
            hat = data::partial_out_hat_with_basis(&hat, data.controls_basis());
        }
        let norms = hat.row_norms();
        let z_normalized = stats::normalized_instruments(&data.z).map_err(|e| match e {
            Error::ZeroInstrument(j) => j,
            _ => usize::MAX,
        });
        Ok(Self {
            data,
            config,
            hat,
            norms,
            z_normalized,
        })
    }

    pub fn data(&self) -> &PartialledData {
        &self.data
    }
    pub fn hat(&self) -> &HatMatrix {
        &self.hat
    }
    pub fn config(&self) -> &TestConfig {
        &self.config
    }

    pub fn set_rho_method(&mut self, method: RhoMethod) {
        self.config.rho_method = method;
    }

    fn residuals(&self, beta0: &[f64]) -> Result<DVector<f64>> {
        rho::null_residuals(&self.data.y, &self.data.x, beta0).map_err(Error::at(Stage::NullResiduals))
    }

    pub fn rho_model(&self, beta0: &[f64]) -> Result<RhoModel> {
        let eps = self.residuals(beta0)?;
        rho::estimate_rho_with_residuals(&self.data, &eps, &self.config.rho_options())
            .map_err(Error::at(Stage::RhoEstimation))
    }

    pub fn diagnostics(&self, beta0: &[f64], q: f64) -> Result<DesignDiagnostics> {
        let model = self.rho_model(beta0)?;
        hat::design_diagnostics(&self.hat, &model.r_hat, q).map_err(Error::at(Stage::Statistic))
    }

    pub fn run(&self, beta0: &[f64], kind: TestKind) -> Result<TestResult> {
        Ok(self.evaluate(beta0, &[kind])?.remove(0))
    }

    /// Runs several tests at one hypothesis, sharing residuals, the slope
    /// fit and bootstrap draws between them.
    pub fn evaluate(&self, beta0: &[f64], kinds: &[TestKind]) -> Result<Vec<TestResult>> {
        let cfg = &self.config;
        let alpha = cfg.alpha;
        let eps = self.residuals(beta0)?;
        let needs_jk = kinds.iter().any(|k| matches!(k, TestKind::Jk | TestKind::Thresholding(_)));
        let needs_ss = kinds.iter().any(|k| matches!(k, TestKind::SupScore | TestKind::Thresholding(_)));
        let needs_c = kinds.iter().any(|k| matches!(k, TestKind::Thresholding(_)));
        let spec = cfg.bootstrap();

        let mut jk_result = None;
        let mut r_hat = None;
        if needs_jk {
            let model = rho::estimate_rho_with_residuals(&self.data, &eps, &cfg.rho_options())
                .map_err(Error::at(Stage::RhoEstimation))?;
            let fs = stats::first_stage(&self.hat, &model.r_hat, &eps).map_err(Error::at(Stage::FirstStage))?;
            let stat = stats::jk_statistic(&eps, &fs, cfg.sing_tol);
            jk_result = Some(jk_test(&stat, self.data.dx(), alpha)?);
            r_hat = Some(model.r_hat);
        }

        let mut ss = None;
        if needs_ss {
            let zn = self
                .z_normalized
                .as_ref()
                .map_err(|&j| Error::at(Stage::Statistic)(Error::ZeroInstrument(j)))?;
            let stat = StatisticValue {
                value: zn.tr_mul(&eps).amax(),
                degenerate: false,
                extras: Default::default(),
            };
            if spec.draws < bootstrap::MIN_DRAWS {
                return Err(Error::at(Stage::Bootstrap)(Error::InvalidArgument(format!(
                    "bootstrap needs at least {} draws, got {}",
                    bootstrap::MIN_DRAWS,
                    spec.draws
                ))));
            }
            let mut draws = bootstrap::sup_score_draws_normalized(&eps, zn, &spec);
            let crit = bootstrap::critical_value(&mut draws, alpha);
            ss = Some((stat, crit));
        }

        let mut cond = None;
        if needs_c {
            let r = r_hat.as_ref().expect("slope fit precedes conditioning");
            if self.norms.iter().all(|&s| s == 0.0) {
                return Err(Error::at(Stage::Statistic)(Error::ZeroHatRows));
            }
            let pi = self.hat.apply(r);
            let c = StatisticValue {
                value: stats::conditioning_from_fit(&pi, &self.norms),
                degenerate: false,
                extras: Default::default(),
            };
            let draws = bootstrap::conditioning_draws_with_norms(&self.hat, r, &self.norms, &spec);
            cond = Some((c, draws));
        }

        let mut out = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let res = match kind {
                TestKind::Jk => jk_result.clone().expect("computed above"),
                TestKind::SupScore => {
                    let (stat, crit) = ss.as_ref().expect("computed above");
                    sup_score_test(stat, *crit, alpha)?
                }
                TestKind::AndersonRubin => {
                    let stat = stats::anderson_rubin(&eps, &self.data.z).map_err(Error::at(Stage::Statistic))?;
                    anderson_rubin_test(&stat, alpha)?
                }
                TestKind::Thresholding(rule) => {
                    let (c, draws) = cond.as_ref().expect("computed above");
                    let tau = match rule {
                        TauRule::Fixed(v) => v,
                        TauRule::Quantile(level) => {
                            let mut d = draws.clone();
                            bootstrap::critical_value(&mut d, 1.0 - level)
                        }
                    };
                    let (stat, crit) = ss.as_ref().expect("computed above");
                    thresholding_test(jk_result.as_ref().expect("computed above"), stat, *crit, c, tau, rule)
                }
            };
            out.push(res);
        }
        Ok(out)
    }
}

/// One-shot test of `beta0` on already partialled data.
pub fn run_test(data: &PartialledData, beta0: &[f64], kind: TestKind, config: &TestConfig) -> Result<TestResult> {
    Pipeline::new(data.clone(), config.clone())?.run(beta0, kind)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceSet {
    pub kind: TestKind,
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub accepted: Vec<bool>,
    pub statistics: Vec<f64>,
    pub critical_values: Vec<f64>,
    /// Maximal runs of accepted grid points as `[lo, hi]`.
    pub intervals: Vec<[f64; 2]>,
    pub empty: bool,
}

pub fn intervals_from_mask(grid: &[f64], accepted: &[bool]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in accepted.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push([grid[s], grid[i - 1]]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([grid[s], grid[grid.len() - 1]]);
    }
    out
}

impl ConfidenceSet {
    pub fn from_results(grid: Vec<f64>, results: &[TestResult], kind: TestKind, alpha: f64) -> Self {
        let accepted: Vec<bool> = results.iter().map(|r| !r.reject).collect();
        let intervals = intervals_from_mask(&grid, &accepted);
        Self {
            kind,
            alpha,
            empty: intervals.is_empty(),
            statistics: results.iter().map(|r| r.statistic).collect(),
            critical_values: results.iter().map(|r| r.critical_value).collect(),
            grid,
            accepted,
            intervals,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.intervals.iter().any(|[lo, hi]| *lo <= value && value <= *hi)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["beta0", "accepted", "statistic", "critical_value"])?;
        for i in 0..self.grid.len() {
            wtr.write_record([
                self.grid[i].to_string(),
                self.accepted[i].to_string(),
                self.statistics[i].to_string(),
                self.critical_values[i].to_string(),
            ])?;
        }
        wtr.flush().map_err(Error::io("<csv>"))?;
        Ok(())
    }
}

/// `points` equally spaced values from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { hi } else { lo + step * i as f64 }).collect())
}

/// Confidence set for a scalar coefficient: every grid point the test fails
/// to reject, all points sharing one master seed.
pub fn invert_ci(pipeline: &Pipeline, grid: &[f64], kind: TestKind) -> Result<ConfidenceSet> {
    if pipeline.data().dx() != 1 {
        return Err(Error::InvalidArgument("confidence sets by inversion need exactly one endogenous variable".into()));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("grid must be nonempty and strictly ascending".into()));
    }
    let results: Vec<TestResult> = grid
        .par_iter()
        .map(|&b| pipeline.run(&[b], kind))
        .collect::<Result<_>>()?;
    Ok(ConfidenceSet::from_results(grid.to_vec(), &results, kind, pipeline.config().alpha))
}
