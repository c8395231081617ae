//! Run configuration: a flat key-value document (TOML, or the JSON written by
//! a previous run) overlaid with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::inference::{TauRule, TestKind};
use crate::sim::{ErrorDist, Regime, SimRho, Strength};

/// Environment variable read when no seed is configured.
pub const SEED_ENV: &str = "JKIV_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Test,
    Invert,
    Simulate,
    FstatDemo,
    Diagnose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HatChoice {
    Ridge,
    Projection,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoChoice {
    Lasso,
    PostLasso,
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    InstrumentsPlusIntercept,
    InstrumentsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvChoice {
    Kfold,
    Loo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauChoice {
    Quantile,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Size,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerChoice {
    Nominal,
    Calibrated,
}

/// Fully resolved settings of one run. Field names double as config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub kind: TestKind,
    pub beta0: Option<Vec<f64>>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_points: usize,
    pub alpha: f64,
    pub hat: HatChoice,
    pub dof_fraction: f64,
    pub hat_path: Option<PathBuf>,
    pub rho: RhoChoice,
    pub rho_path: Option<PathBuf>,
    pub basis: BasisChoice,
    pub cv: CvChoice,
    pub cv_folds: usize,
    pub lambda: Option<f64>,
    pub draws: usize,
    pub tau_rule: TauChoice,
    pub tau_level: f64,
    pub tau_value: Option<f64>,
    pub collinear_tol: f64,
    pub diag_quantile: f64,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub n: Option<usize>,
    pub regime: Regime,
    pub rho1: f64,
    pub rho2: f64,
    pub strength: Strength,
    pub beta_true: Vec<f64>,
    pub reps: Option<u64>,
    pub errors: ErrorDist,
    pub sim_rho: SimRho,
    pub tests: Vec<TestKind>,
    pub experiment: Experiment,
    pub offset_lo: f64,
    pub offset_hi: f64,
    pub offset_points: usize,
    pub power_mode: PowerChoice,
    pub null_reps: u64,
    pub selected: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            data: None,
            schema: None,
            kind: TestKind::Jk,
            beta0: None,
            grid_lo: None,
            grid_hi: None,
            grid_points: 300,
            alpha: 0.05,
            hat: HatChoice::Ridge,
            dof_fraction: 0.2,
            hat_path: None,
            rho: RhoChoice::Lasso,
            rho_path: None,
            basis: BasisChoice::InstrumentsPlusIntercept,
            cv: CvChoice::Kfold,
            cv_folds: 10,
            lambda: None,
            draws: 1000,
            tau_rule: TauChoice::Quantile,
            tau_level: 0.75,
            tau_value: None,
            collinear_tol: 1e-10,
            diag_quantile: 25.0,
            seed: None,
            output: None,
            threads: None,
            n: None,
            regime: Regime::Dz10,
            rho1: 0.2,
            rho2: 0.3,
            strength: Strength::Weak,
            beta_true: vec![1.0],
            reps: None,
            errors: ErrorDist::Laplace,
            sim_rho: SimRho::Lasso,
            tests: vec![
                TestKind::Jk,
                TestKind::SupScore,
                TestKind::Thresholding(TauRule::Quantile(0.75)),
            ],
            experiment: Experiment::Size,
            offset_lo: -4.0,
            offset_hi: 4.0,
            offset_points: 100,
            power_mode: PowerChoice::Calibrated,
            null_reps: 2000,
            selected: vec![1, 5, 10, 20, 40],
        }
    }
}

fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => Value::from(f),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

/// Reads a flat config document. A JSON result file from an earlier run is
/// accepted too; its embedded `config` object is used.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let value = if text.trim_start().starts_with('{') {
        serde_json::from_str::<Value>(&text)?
    } else {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        toml_to_json(toml::Value::Table(table))
    };
    let mut map = match value {
        Value::Object(m) => m,
        _ => return Err(Error::Config("config must be a key-value document".into())),
    };
    if let Some(Value::Object(inner)) = map.remove("config") {
        map = inner;
    }
    if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object()) {
        return Err(Error::Config(format!("key `{k}`: nested tables are not supported")));
    }
    Ok(map)
}

/// Builds a config from merged key-values, naming the offending key on error.
pub fn config_from_map(map: Map<String, Value>) -> Result<RunConfig> {
    let known = serde_json::to_value(RunConfig::default())?;
    let known = known.as_object().expect("config serializes to an object");
    for (key, value) in &map {
        if !known.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let mut single = Map::new();
        single.insert(key.clone(), value.clone());
        if let Err(e) = serde_json::from_value::<RunConfig>(Value::Object(single)) {
            let msg = e.to_string();
            return Err(Error::Config(format!("key `{key}`: {}", msg.trim_start_matches("config: "))));
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
}

/// File values, then explicit flags, then the environment seed fallback.
pub fn parse_config(file: Option<&Path>, overrides: Map<String, Value>) -> Result<RunConfig> {
    let mut map = match file {
        Some(p) => read_config_file(p)?,
        None => Map::new(),
    };
    for (k, v) in overrides {
        map.insert(k, v);
    }
    let mut cfg = config_from_map(map)?;
    if cfg.seed.is_none() {
        cfg.seed = Some(match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?,
            Err(_) => 0,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let cmd = self.command.ok_or_else(|| Error::Config("missing required key `command`".into()))?;
        let need = |present: bool, key: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!("missing required key `{key}`")))
            }
        };
        if matches!(cmd, Command::Test | Command::Invert | Command::Diagnose) {
            need(self.data.is_some(), "data")?;
            need(self.schema.is_some(), "schema")?;
        }
        if matches!(cmd, Command::Test | Command::Diagnose) {
            need(self.beta0.is_some(), "beta0")?;
        }
        if cmd == Command::Invert {
            need(self.grid_lo.is_some(), "grid_lo")?;
            need(self.grid_hi.is_some(), "grid_hi")?;
        }
        if self.hat == HatChoice::Custom {
            need(self.hat_path.is_some(), "hat_path")?;
        }
        if self.rho == RhoChoice::Known {
            need(self.rho_path.is_some(), "rho_path")?;
        }
        if self.tau_rule == TauChoice::Fixed {
            need(self.tau_value.is_some(), "tau_value")?;
        }
        let range = |ok: bool, key: &str, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("key `{key}`: {what}")))
            }
        };
        range(self.alpha > 0.0 && self.alpha < 1.0, "alpha", "must lie in (0, 1)")?;
        range(self.dof_fraction > 0.0 && self.dof_fraction <= 1.0, "dof_fraction", "must lie in (0, 1]")?;
        range(self.tau_level > 0.0 && self.tau_level < 1.0, "tau_level", "must lie in (0, 1)")?;
        range(self.diag_quantile > 0.0 && self.diag_quantile < 100.0, "diag_quantile", "must lie in (0, 100)")?;
        range(self.cv_folds >= 2, "cv_folds", "must be at least 2")?;
        range(self.grid_points >= 1, "grid_points", "must be positive")?;
        range(self.threads != Some(0), "threads", "must be positive")?;
        range(self.collinear_tol > 0.0, "collinear_tol", "must be positive")?;
        range(self.lambda.is_none_or(|l| l > 0.0), "lambda", "must be positive")?;
        Ok(())
    }

    /// Test kind with the configured thresholding cutoff applied.
    pub fn resolved_kind(&self, kind: TestKind) -> TestKind {
        match kind {
            TestKind::Thresholding(rule) => {
                if self.tau_rule == TauChoice::Fixed {
                    TestKind::Thresholding(TauRule::Fixed(self.tau_value.unwrap_or(0.0)))
                } else if self.tau_level != 0.75 {
                    TestKind::Thresholding(TauRule::Quantile(self.tau_level))
                } else {
                    TestKind::Thresholding(rule)
                }
            }
            k => k,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Flat key-value form; parsing it back yields the same config.
    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    /// The map embedded in results: everything that affects the numbers.
    pub fn replay_map(&self) -> Map<String, Value> {
        let mut m = self.to_map();
        m.remove("threads");
        m
    }
}
