//! Command-line front end: `test`, `invert`, `diagnose`, `simulate` and
//! `fstat-demo`.
//!
//! Every command writes one JSON document. It embeds the resolved
//! configuration, so `jkiv <command> --config result.json` replays the run.
//! Tables also go to a CSV file next to the JSON.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{self, BasisChoice, Command, CvChoice, Experiment, HatChoice, PowerChoice, RhoChoice, RunConfig};
use crate::data::{self, PartialledData, Schema};
use crate::error::{Error, Result};
use crate::inference::{self, HatSpec, Pipeline, TestConfig};
use crate::rho::{BasisSpec, CvFolds, LambdaRule, RhoMethod};
use crate::sim::{self, experiment::PowerMode, SimulationSpec};

/// Flags shared by all commands. Each maps onto the config key of the same
/// name and overrides the value from `--config`.
#[derive(Debug, Default, Args, Serialize)]
pub struct Flags {
    /// TOML config, or a JSON result of an earlier run to replay.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// jk, sup_score, thresholding, anderson_rubin.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// ridge, projection, custom.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hat: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dof_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hat_path: Option<PathBuf>,
    /// lasso, post_lasso, known.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_path: Option<PathBuf>,
    /// instruments_plus_intercept, instruments_only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
    /// kfold, loo.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    /// Fixed LASSO penalty instead of cross-validation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    /// quantile, fixed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_rule: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_level: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_value: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collinear_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag_quantile: Option<f64>,
    /// Master seed; falls back to the JKIV_SEED environment variable, then 0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// dz10, dz30, dz65, dz75.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
    /// strong, intermediate, weak.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_true: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    /// laplace, gaussian.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<String>,
    /// lasso, post_lasso, oracle.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_rho: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<String>>,
    /// size, power.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_points: Option<usize>,
    /// nominal, calibrated.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_reps: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Test one hypothesis on a dataset.
    Test(Flags),
    /// Confidence set for a scalar coefficient by test inversion over a grid.
    Invert(Flags),
    /// Monte Carlo size or power table.
    Simulate(Flags),
    /// First-stage F after LASSO selection of many instruments.
    FstatDemo(Flags),
    /// Hat matrix and design diagnostics at one hypothesis.
    Diagnose(Flags),
}

#[derive(Debug, Parser)]
#[command(name = "jkiv", version, about = "Jackknife and sup-score inference for linear IV with many instruments")]
struct Cli {
    #[command(subcommand)]
    sub: Sub,
}

/// Parses command-line arguments (program name first) into a resolved config.
pub fn parse_args<I, T>(args: I) -> std::result::Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Clap)?;
    let (command, flags) = match cli.sub {
        Sub::Test(f) => (Command::Test, f),
        Sub::Invert(f) => (Command::Invert, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::FstatDemo(f) => (Command::FstatDemo, f),
        Sub::Diagnose(f) => (Command::Diagnose, f),
    };
    let mut overrides: Map<String, Value> = match serde_json::to_value(&flags) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    overrides.insert("command".into(), serde_json::to_value(command).expect("command serializes"));
    config::parse_config(flags.config.as_deref(), overrides).map_err(CliError::Run)
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Run(Error),
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub json: Value,
    pub summary: String,
    pub csv: Option<String>,
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(Error::from)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    column: format!("{}:{}", path.display(), j + 1),
                    row: i + 1,
                    value: cell.to_string(),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        column: format!("{}:{}", path.display(), j + 1),
                        row: i + 1,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::Dimension(format!("{}: ragged rows", path.display())));
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

struct Loaded {
    data: PartialledData,
    dropped: Vec<String>,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let schema = Schema::from_file(cfg.schema.as_deref().expect("validated"))?;
    let ds = data::load_csv(cfg.data.as_deref().expect("validated"), &schema)?;
    let pruned = data::drop_collinear_instruments(ds.z(), cfg.collinear_tol)?;
    let names = &ds.names().instruments;
    let dropped: Vec<String> = pruned.dropped.iter().map(|&j| names[j].clone()).collect();
    let ds = if dropped.is_empty() {
        ds
    } else {
        let kept = pruned.kept.iter().map(|&j| names[j].clone()).collect();
        ds.with_instruments(pruned.z, kept)?
    };
    Ok(Loaded {
        data: data::partial_out_controls(&ds)?,
        dropped,
    })
}

fn test_config(cfg: &RunConfig) -> Result<TestConfig> {
    let hat = match cfg.hat {
        HatChoice::Ridge => HatSpec::Ridge {
            dof_fraction: cfg.dof_fraction,
        },
        HatChoice::Projection => HatSpec::Projection,
        HatChoice::Custom => HatSpec::Custom(Arc::new(read_matrix(cfg.hat_path.as_deref().expect("validated"))?)),
    };
    let rho_method = match cfg.rho {
        RhoChoice::Lasso => RhoMethod::Lasso,
        RhoChoice::PostLasso => RhoMethod::PostLasso,
        RhoChoice::Known => RhoMethod::Known(read_matrix(cfg.rho_path.as_deref().expect("validated"))?),
    };
    let basis = match cfg.basis {
        BasisChoice::InstrumentsPlusIntercept => BasisSpec::InstrumentsPlusIntercept,
        BasisChoice::InstrumentsOnly => BasisSpec::InstrumentsOnly,
    };
    let lambda = match cfg.lambda {
        Some(l) => LambdaRule::Fixed(l),
        None => LambdaRule::CrossValidated(match cfg.cv {
            CvChoice::Kfold => CvFolds::KFold(cfg.cv_folds),
            CvChoice::Loo => CvFolds::LeaveOneOut,
        }),
    };
    Ok(TestConfig {
        alpha: cfg.alpha,
        hat,
        basis,
        rho_method,
        lambda,
        draws: cfg.draws,
        seed: cfg.seed(),
        ..TestConfig::default()
    })
}

fn hat_summary(p: &Pipeline) -> Value {
    let h = p.hat();
    json!({ "kind": h.kind(), "ridge_penalty": h.ridge_penalty(), "dof": h.dof() })
}

fn simulation_spec(cfg: &RunConfig) -> SimulationSpec {
    SimulationSpec {
        n: cfg.n.unwrap_or(200),
        regime: cfg.regime,
        rho1: cfg.rho1,
        rho2: cfg.rho2,
        strength: cfg.strength,
        beta_true: cfg.beta_true.clone(),
        reps: cfg.reps.unwrap_or(100),
        draws: cfg.draws,
        tests: cfg.tests.iter().map(|&k| cfg.resolved_kind(k)).collect(),
        seed: cfg.seed(),
        errors: cfg.errors,
        rho: cfg.sim_rho,
        dof_fraction: cfg.dof_fraction,
        cv_folds: cfg.cv_folds,
        alpha: cfg.alpha,
    }
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Runs a resolved config without touching the filesystem beyond its inputs.
pub fn execute(cfg: &RunConfig) -> Result<Report> {
    let command = cfg.command.ok_or_else(|| Error::Config("missing required key `command`".into()))?;
    let (result, summary, csv) = match command {
        Command::Test => {
            let loaded = load(cfg)?;
            let beta0 = cfg.beta0.clone().expect("validated");
            let kind = cfg.resolved_kind(cfg.kind);
            let pipeline = Pipeline::new(loaded.data, test_config(cfg)?)?;
            let res = pipeline.run(&beta0, kind)?;
            let summary = format!(
                "{} test of beta0 = {}: statistic {:.6}, critical value {:.6}{}, {}",
                kind,
                fmt_vec(&beta0),
                res.statistic,
                res.critical_value,
                res.p_value.map_or(String::new(), |p| format!(", p-value {p:.4}")),
                if res.reject { "reject" } else { "do not reject" }
            );
            let result = json!({
                "dropped_instruments": loaded.dropped,
                "hat": hat_summary(&pipeline),
                "test": res,
            });
            (result, summary, None)
        }
        Command::Invert => {
            let loaded = load(cfg)?;
            let kind = cfg.resolved_kind(cfg.kind);
            let grid = inference::uniform_grid(cfg.grid_lo.expect("validated"), cfg.grid_hi.expect("validated"), cfg.grid_points)?;
            let pipeline = Pipeline::new(loaded.data, test_config(cfg)?)?;
            let set = inference::invert_ci(&pipeline, &grid, kind)?;
            let shown: Vec<String> = set.intervals.iter().map(|[a, b]| format!("[{a}, {b}]")).collect();
            let summary = format!(
                "{:.0}% {} confidence set: {}",
                100.0 * (1.0 - cfg.alpha),
                kind,
                if set.empty { "empty".to_string() } else { shown.join(" U ") }
            );
            let csv = csv_string(|b| set.write_csv(b))?;
            let result = json!({
                "dropped_instruments": loaded.dropped,
                "hat": hat_summary(&pipeline),
                "confidence_set": set,
            });
            (result, summary, Some(csv))
        }
        Command::Diagnose => {
            let loaded = load(cfg)?;
            let beta0 = cfg.beta0.clone().expect("validated");
            let pipeline = Pipeline::new(loaded.data, test_config(cfg)?)?;
            let diag = pipeline.diagnostics(&beta0, cfg.diag_quantile)?;
            let rho = pipeline.rho_model(&beta0)?;
            let f = &diag.flags;
            let summary = format!(
                "leverage ratio {:.4}, first-stage ratio {:.4}, row/column ratio {:.4}, eigen ratio {:.4}; warnings: row norms {}, first stage {}, eigenvalues {}, row/column {}",
                diag.leverage_ratio,
                diag.first_stage_ratio_min,
                diag.row_col_ratio,
                diag.eig_ratio,
                f.row_norm_warn,
                f.first_stage_warn,
                f.eig_warn,
                f.row_col_warn,
            );
            let result = json!({
                "dropped_instruments": loaded.dropped,
                "hat": hat_summary(&pipeline),
                "diagnostics": diag,
                "rho": rho,
            });
            (result, summary, None)
        }
        Command::Simulate => {
            let spec = simulation_spec(cfg);
            match cfg.experiment {
                Experiment::Size => {
                    let table = sim::size_experiment(&spec)?;
                    let lines: Vec<String> = table
                        .cells
                        .iter()
                        .map(|c| format!("{}: {:.4} (se {:.4})", c.test, c.frequency(), c.mc_se()))
                        .collect();
                    let summary = format!("rejection frequency over {} replications: {}", spec.reps, lines.join(", "));
                    let csv = csv_string(|b| table.write_csv(b))?;
                    (json!({ "size": table }), summary, Some(csv))
                }
                Experiment::Power => {
                    let offsets = sim::experiment::offset_grid(cfg.offset_lo, cfg.offset_hi, cfg.offset_points)?;
                    let mode = match cfg.power_mode {
                        PowerChoice::Nominal => PowerMode::Nominal,
                        PowerChoice::Calibrated => PowerMode::Calibrated {
                            null_reps: cfg.null_reps,
                        },
                    };
                    let table = sim::power_curve(&spec, &offsets, mode)?;
                    let summary = format!(
                        "power curve: {} offsets x {} tests over {} replications",
                        offsets.len(),
                        spec.tests.len(),
                        spec.reps
                    );
                    let csv = csv_string(|b| table.write_csv(b))?;
                    (json!({ "power": table }), summary, Some(csv))
                }
            }
        }
        Command::FstatDemo => {
            let table = sim::fstat_demo(cfg.n.unwrap_or(1000), &cfg.selected, cfg.reps.unwrap_or(100), cfg.seed())?;
            let lines: Vec<String> = table
                .rows
                .iter()
                .map(|r| format!("k={}: {}", r.k, r.mean_f.map_or("n/a".to_string(), |v| format!("{v:.3}"))))
                .collect();
            let summary = format!(
                "mean first-stage F: true instruments {:.3}; selected {}",
                table.true_instrument_f,
                lines.join(", ")
            );
            let csv = csv_string(|b| table.write_csv(b))?;
            (json!({ "fstat": table }), summary, Some(csv))
        }
    };
    let json = json!({
        "command": command,
        "seed": cfg.seed(),
        "config": cfg.replay_map(),
        "result": result,
    });
    Ok(Report { json, summary, csv })
}

/// Executes on a dedicated pool when `threads` is set.
pub fn execute_with_threads(cfg: &RunConfig) -> Result<Report> {
    match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| execute(cfg)),
        None => execute(cfg),
    }
}

/// Where the CSV table of a run goes, given its JSON output path.
pub fn csv_path(output: &Path) -> PathBuf {
    let p = output.with_extension("csv");
    if p == output {
        output.with_extension("table.csv")
    } else {
        p
    }
}

/// Writes the report to `cfg.output` (JSON, plus CSV for tables) or stdout.
pub fn emit(cfg: &RunConfig, report: &Report) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.json)? + "\n";
    match &cfg.output {
        Some(out) => {
            std::fs::write(out, text).map_err(Error::io(out))?;
            if let Some(csv) = &report.csv {
                let p = csv_path(out);
                std::fs::write(&p, csv).map_err(Error::io(&p))?;
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Process exit code for an error: 1 for bad input, 2 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        1
    } else {
        2
    }
}

/// Entry point behind the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_args(args) {
        Ok(c) => c,
        Err(CliError::Clap(e)) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let report = execute_with_threads(&cfg).and_then(|r| {
        println!("{}", r.summary);
        emit(&cfg, &r)
    });
    match report {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
