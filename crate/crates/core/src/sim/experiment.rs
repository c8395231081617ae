use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{gen_dgp, SimDraw, SimRho, SimulationSpec};
use crate::data::PartialledData;
use crate::error::{Error, Result};
use crate::inference::{HatSpec, Pipeline, TestConfig, TestKind, TestResult};
use crate::linalg;
use crate::rho::{CvFolds, LambdaRule, RhoMethod};
use crate::rng::{derive_seed, StreamLabel};

/// Test configuration used inside replication `rep` at hypothesis `beta0`.
pub fn replication_config(spec: &SimulationSpec, draw: &SimDraw, rep: u64, beta0: &[f64]) -> TestConfig {
    let rho_method = match spec.rho {
        SimRho::Lasso => RhoMethod::Lasso,
        SimRho::PostLasso => RhoMethod::PostLasso,
        SimRho::Oracle => RhoMethod::Known(draw.true_rho(spec, beta0)),
    };
    TestConfig {
        alpha: spec.alpha,
        hat: HatSpec::Ridge {
            dof_fraction: spec.dof_fraction,
        },
        rho_method,
        lambda: LambdaRule::CrossValidated(CvFolds::KFold(spec.cv_folds)),
        draws: spec.draws,
        seed: derive_seed(spec.seed, StreamLabel::RunSeed, rep),
        ..TestConfig::default()
    }
}

/// Runs `spec.tests` at `beta_true + offset` for every offset in one
/// replication; the hat matrix is shared across offsets.
pub fn run_replication(spec: &SimulationSpec, rep: u64, offsets: &[Vec<f64>]) -> Result<Vec<Vec<TestResult>>> {
    let wrap = |e| Error::Replication {
        rep,
        source: Box::new(e),
    };
    let draw = gen_dgp(spec, rep).map_err(wrap)?;
    let data = PartialledData::from_dataset_without_controls(&draw.data);
    let mut pipeline: Option<Pipeline> = None;
    let mut out = Vec::with_capacity(offsets.len());
    for off in offsets {
        let beta0: Vec<f64> = spec.beta_true.iter().zip(off).map(|(b, o)| b + o).collect();
        let cfg = replication_config(spec, &draw, rep, &beta0);
        // only the slope source changes with beta0; the hat matrix is reused
        let p = match pipeline.take() {
            Some(mut p) => {
                p.set_rho_method(cfg.rho_method);
                p
            }
            None => Pipeline::new(data.clone(), cfg).map_err(wrap)?,
        };
        out.push(p.evaluate(&beta0, &spec.tests).map_err(wrap)?);
        pipeline = Some(p);
    }
    Ok(out)
}

/// Per-replication results at the true parameter.
pub fn null_results(spec: &SimulationSpec, reps: Range<u64>) -> Result<Vec<Vec<TestResult>>> {
    spec.validate()?;
    let zero = vec![vec![0.0; spec.dx()]];
    reps.into_par_iter()
        .map(|r| run_replication(spec, r, &zero).map(|mut v| v.remove(0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCell {
    pub test: TestKind,
    pub rejections: u64,
    pub reps: u64,
}

impl SizeCell {
    pub fn frequency(&self) -> f64 {
        self.rejections as f64 / self.reps as f64
    }

    /// `sqrt(p (1 - p) / reps)`.
    pub fn mc_se(&self) -> f64 {
        let p = self.frequency();
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub spec: SimulationSpec,
    /// Replication indices covered, possibly several merged ranges.
    pub rep_ranges: Vec<(u64, u64)>,
    pub cells: Vec<SizeCell>,
}

pub fn size_experiment(spec: &SimulationSpec) -> Result<SizeTable> {
    size_experiment_range(spec, 0..spec.reps)
}

pub fn size_experiment_range(spec: &SimulationSpec, reps: Range<u64>) -> Result<SizeTable> {
    if reps.is_empty() {
        return Err(Error::InvalidArgument("empty replication range".into()));
    }
    let results = null_results(spec, reps.clone())?;
    let cells = spec
        .tests
        .iter()
        .enumerate()
        .map(|(k, &test)| SizeCell {
            test,
            rejections: results.iter().filter(|r| r[k].reject).count() as u64,
            reps: results.len() as u64,
        })
        .collect();
    Ok(SizeTable {
        spec: spec.clone(),
        rep_ranges: vec![(reps.start, reps.end)],
        cells,
    })
}

impl SizeTable {
    /// Pools two tables over disjoint replication ranges of the same design.
    pub fn merge(&self, other: &SizeTable) -> Result<SizeTable> {
        let strip = |s: &SimulationSpec| SimulationSpec { reps: 0, ..s.clone() };
        if strip(&self.spec) != strip(&other.spec) {
            return Err(Error::InvalidArgument("cannot merge tables from different designs".into()));
        }
        let overlap = self.rep_ranges.iter().any(|&(a, b)| {
            other
                .rep_ranges
                .iter()
                .any(|&(c, d)| a < d && c < b)
        });
        if overlap {
            return Err(Error::InvalidArgument("replication ranges overlap".into()));
        }
        let mut ranges = self.rep_ranges.clone();
        ranges.extend(&other.rep_ranges);
        ranges.sort_unstable();
        let mut coalesced: Vec<(u64, u64)> = Vec::with_capacity(ranges.len());
        for (a, b) in ranges {
            match coalesced.last_mut() {
                Some(last) if last.1 == a => last.1 = b,
                _ => coalesced.push((a, b)),
            }
        }
        let ranges = coalesced;
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| SizeCell {
                test: a.test,
                rejections: a.rejections + b.rejections,
                reps: a.reps + b.reps,
            })
            .collect();
        Ok(SizeTable {
            spec: self.spec.clone(),
            rep_ranges: ranges,
            cells,
        })
    }

    pub fn cell(&self, test: TestKind) -> Option<&SizeCell> {
        self.cells.iter().find(|c| c.test == test)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let s = &self.spec;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "dz", "rho1", "rho2", "strength", "test", "reps", "frequency", "mc_se"])?;
        for c in &self.cells {
            wtr.write_record([
                s.n.to_string(),
                s.regime.dz().to_string(),
                s.rho1.to_string(),
                s.rho2.to_string(),
                s.strength.to_string(),
                c.test.to_string(),
                c.reps.to_string(),
                c.frequency().to_string(),
                c.mc_se().to_string(),
            ])?;
        }
        wtr.flush().map_err(Error::io("<csv>"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// Chi-squared, F and bootstrap critical values.
    Nominal,
    /// Each test's critical value is the empirical `1 - alpha` quantile of its
    /// normalized statistic in a separate null run of `null_reps`.
    Calibrated { null_reps: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub offset: f64,
    pub test: TestKind,
    pub reps: u64,
    pub frequency: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub spec: SimulationSpec,
    pub mode: PowerMode,
    /// Calibrated cutoffs for the normalized statistics, one per test.
    pub calibrated_critical: Option<Vec<f64>>,
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn frequency(&self, offset: f64, test: TestKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.test == test && r.offset == offset)
            .map(|r| r.frequency)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let s = &self.spec;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "dz", "rho1", "rho2", "strength", "offset", "test", "reps", "frequency", "mc_se"])?;
        for r in &self.rows {
            wtr.write_record([
                s.n.to_string(),
                s.regime.dz().to_string(),
                s.rho1.to_string(),
                s.rho2.to_string(),
                s.strength.to_string(),
                r.offset.to_string(),
                r.test.to_string(),
                r.reps.to_string(),
                r.frequency.to_string(),
                r.mc_se.to_string(),
            ])?;
        }
        wtr.flush().map_err(Error::io("<csv>"))?;
        Ok(())
    }
}

/// Calibrated cutoffs: the `1 - alpha` order statistic of each test's
/// normalized statistic under the null, from an independent seed stream.
pub fn calibrate(spec: &SimulationSpec, null_reps: u64) -> Result<Vec<f64>> {
    let null_spec = SimulationSpec {
        seed: derive_seed(spec.seed, StreamLabel::CalibrationNull, 0),
        reps: null_reps,
        ..spec.clone()
    };
    let results = null_results(&null_spec, 0..null_reps)?;
    Ok((0..spec.tests.len())
        .map(|k| {
            let mut t: Vec<f64> = results.iter().map(|r| r[k].normalized()).collect();
            linalg::upper_order_statistic(&mut t, 1.0 - spec.alpha)
        })
        .collect())
}

/// Rejection frequencies at `beta_true + offset` for each offset.
pub fn power_curve(spec: &SimulationSpec, offsets: &[f64], mode: PowerMode) -> Result<PowerTable> {
    spec.validate()?;
    if spec.dx() != 1 {
        return Err(Error::InvalidArgument("power curves need exactly one endogenous variable".into()));
    }
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("no offsets given".into()));
    }
    let calibrated = match mode {
        PowerMode::Nominal => None,
        PowerMode::Calibrated { null_reps } => {
            if null_reps == 0 {
                return Err(Error::InvalidArgument("calibration needs at least one null replication".into()));
            }
            Some(calibrate(spec, null_reps)?)
        }
    };
    let offs: Vec<Vec<f64>> = offsets.iter().map(|&o| vec![o]).collect();
    let results: Vec<Vec<Vec<TestResult>>> = (0..spec.reps)
        .into_par_iter()
        .map(|r| run_replication(spec, r, &offs))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(offsets.len() * spec.tests.len());
    for (j, &offset) in offsets.iter().enumerate() {
        for (k, &test) in spec.tests.iter().enumerate() {
            let hits = results
                .iter()
                .filter(|rep| {
                    let res = &rep[j][k];
                    match &calibrated {
                        None => res.reject,
                        Some(c) => res.normalized() > c[k],
                    }
                })
                .count() as u64;
            let p = hits as f64 / spec.reps as f64;
            rows.push(PowerRow {
                offset,
                test,
                reps: spec.reps,
                frequency: p,
                mc_se: (p * (1.0 - p) / spec.reps as f64).sqrt(),
            });
        }
    }
    Ok(PowerTable {
        spec: spec.clone(),
        mode,
        calibrated_critical: calibrated,
        rows,
    })
}

/// `points` equally spaced offsets on `[lo, hi]`.
pub fn offset_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    crate::inference::uniform_grid(lo, hi, points)
}
