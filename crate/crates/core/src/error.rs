use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage attached to errors raised inside [`crate::inference::Pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Controls,
    HatMatrix,
    NullResiduals,
    RhoEstimation,
    FirstStage,
    Statistic,
    Bootstrap,
    Simulation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Controls => "partialling out controls",
            Stage::HatMatrix => "hat matrix construction",
            Stage::NullResiduals => "null residuals",
            Stage::RhoEstimation => "rho estimation",
            Stage::FirstStage => "first stage",
            Stage::Statistic => "test statistic",
            Stage::Bootstrap => "multiplier bootstrap",
            Stage::Simulation => "simulation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("empty cell at row {row}, column `{column}`")]
    EmptyCell { row: usize, column: String },
    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("duplicate role: {0}")]
    DuplicateRole(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("every instrument column is numerically zero or collinear")]
    AllColumnsDropped,
    #[error("controls are rank deficient (column {0} is collinear with earlier controls); drop redundant controls")]
    RankDeficientControls(usize),
    #[error("instrument column {0} is identically zero")]
    ZeroInstrument(usize),
    #[error("every row of the hat matrix has zero norm")]
    ZeroHatRows,
    #[error("residual sum of squares is zero")]
    ZeroResidual,
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
    #[error("lasso did not converge after {sweeps} sweeps (KKT violation {kkt_violation:e})")]
    LassoNoConvergence { sweeps: usize, kkt_violation: f64 },
    #[error("replication {rep} failed: {source}")]
    Replication {
        rep: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{stage}: {source}")]
    Pipeline {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs (files, schema, config)
    /// rather than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::EmptyCell { .. }
            | Error::NonNumeric { .. }
            | Error::NonFinite { .. }
            | Error::DuplicateRole(_)
            | Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Json(_) => true,
            Error::Pipeline { source, .. } | Error::Replication { source, .. } => {
                source.is_input_error()
            }
            _ => false,
        }
    }

    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            e @ Error::Pipeline { .. } => e,
            e => Error::Pipeline {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
