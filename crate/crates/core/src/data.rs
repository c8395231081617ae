//! Dataset ingestion, validation and partialling-out of exogenous controls.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hat::HatMatrix;
use crate::linalg::{self, RANK_TOL};

/// Column-role assignment for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
}

impl Schema {
    /// Parses a flat TOML document with keys `outcome`, `endogenous`,
    /// `instruments` and optional `controls`. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut schema = Schema::default();
        for (key, value) in table {
            let names = match value {
                toml::Value::String(s) => vec![s],
                toml::Value::Array(items) => items
                    .into_iter()
                    .map(|v| match v {
                        toml::Value::String(s) => Ok(s),
                        other => Err(Error::Config(format!(
                            "schema key `{key}` expects column names, got {other}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?,
                other => {
                    return Err(Error::Config(format!(
                        "schema key `{key}` expects column names, got {other}"
                    )))
                }
            };
            match key.as_str() {
                "outcome" => {
                    if names.len() != 1 {
                        return Err(Error::DuplicateRole(format!(
                            "exactly one outcome column required, got {}",
                            names.len()
                        )));
                    }
                    schema.outcome = names.into_iter().next().unwrap();
                }
                "endogenous" => schema.endogenous = names,
                "instruments" => schema.instruments = names,
                "controls" => schema.controls = names,
                other => return Err(Error::Config(format!("unknown schema key `{other}`"))),
            }
        }
        if schema.outcome.is_empty() {
            return Err(Error::Config("schema is missing `outcome`".into()));
        }
        schema.check_roles()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml_str(&text)
    }

    fn check_roles(&self) -> Result<()> {
        let mut seen: HashMap<&str, &str> = HashMap::new();
        let roles = std::iter::once(("outcome", &self.outcome))
            .chain(self.endogenous.iter().map(|c| ("endogenous", c)))
            .chain(self.instruments.iter().map(|c| ("instrument", c)))
            .chain(self.controls.iter().map(|c| ("control", c)));
        for (role, col) in roles {
            if let Some(prev) = seen.insert(col.as_str(), role) {
                return Err(Error::DuplicateRole(format!(
                    "column `{col}` assigned to both {prev} and {role}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnNames {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    pub controls: Vec<String>,
}

/// Observations of a linear IV model: outcome `y`, endogenous `x`,
/// instruments `z` and included exogenous controls.
#[derive(Debug, Clone, PartialEq)]
pub struct IVDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    controls: DMatrix<f64>,
    names: ColumnNames,
}

impl IVDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        controls: DMatrix<f64>,
        names: Option<ColumnNames>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        for (what, rows) in [("x", x.nrows()), ("z", z.nrows()), ("controls", controls.nrows())] {
            if rows != n {
                return Err(Error::Dimension(format!("{what} has {rows} rows, y has {n}")));
            }
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return Err(Error::InvalidData(
                "need at least one endogenous variable and one instrument".into(),
            ));
        }
        if controls.ncols() >= n {
            return Err(Error::InvalidData(format!(
                "{} controls for {n} observations",
                controls.ncols()
            )));
        }
        let finite = y.iter().chain(x.iter()).chain(z.iter()).chain(controls.iter());
        if !finite.into_iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        let names = match names {
            Some(n) => n,
            None => ColumnNames {
                outcome: "y".into(),
                endogenous: (0..x.ncols()).map(|i| format!("x{}", i + 1)).collect(),
                instruments: (0..z.ncols()).map(|i| format!("z{}", i + 1)).collect(),
                controls: (0..controls.ncols()).map(|i| format!("c{}", i + 1)).collect(),
            },
        };
        Ok(Self {
            y,
            x,
            z,
            controls,
            names,
        })
    }

    /// Dataset without controls.
    pub fn without_controls(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(y, x, z, DMatrix::zeros(n, 0), None)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn dx(&self) -> usize {
        self.x.ncols()
    }
    pub fn dz(&self) -> usize {
        self.z.ncols()
    }
    pub fn dc(&self) -> usize {
        self.controls.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }
    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    /// Replaces the instrument block, e.g. after collinearity pruning.
    pub fn with_instruments(mut self, z: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if z.nrows() != self.n() || names.len() != z.ncols() {
            return Err(Error::Dimension("instrument block shape".into()));
        }
        self.z = z;
        self.names.instruments = names;
        Ok(self)
    }
}

/// Reads a header-first, comma-separated file and routes columns by `schema`.
/// Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<IVDataset> {
    schema.check_roles()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let index: BTreeMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let locate = |cols: &[String]| -> Result<Vec<usize>> {
        cols.iter()
            .map(|c| {
                index
                    .get(c.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingColumn(c.clone()))
            })
            .collect()
    };
    let y_idx = locate(std::slice::from_ref(&schema.outcome))?[0];
    let x_idx = locate(&schema.endogenous)?;
    let z_idx = locate(&schema.instruments)?;
    let c_idx = locate(&schema.controls)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let mut parsed = vec![f64::NAN; header.len()];
        for &j in std::iter::once(&y_idx)
            .chain(&x_idx)
            .chain(&z_idx)
            .chain(&c_idx)
        {
            let column = header[j].clone();
            let cell = record.get(j).map(str::trim).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::EmptyCell { row, column });
            }
            let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            parsed[j] = value;
        }
        rows.push(parsed);
    }
    let n = rows.len();
    let block = |cols: &[usize]| DMatrix::from_fn(n, cols.len(), |i, k| rows[i][cols[k]]);
    let y = DVector::from_fn(n, |i, _| rows[i][y_idx]);
    IVDataset::new(
        y,
        block(&x_idx),
        block(&z_idx),
        block(&c_idx),
        Some(ColumnNames {
            outcome: schema.outcome.clone(),
            endogenous: schema.endogenous.clone(),
            instruments: schema.instruments.clone(),
            controls: schema.controls.clone(),
        }),
    )
}

/// Result of [`drop_collinear_instruments`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedInstruments {
    pub z: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Drops instrument columns lying (within `rel_tol` times the largest
/// singular value) in the span of the retained columns to their left.
pub fn drop_collinear_instruments(z: &DMatrix<f64>, rel_tol: f64) -> Result<PrunedInstruments> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument("collinearity tolerance must be positive".into()));
    }
    let smax = linalg::max_singular_value(z);
    if smax == 0.0 {
        return Err(Error::AllColumnsDropped);
    }
    let (_, kept, dropped) = linalg::greedy_orthonormalize(z, rel_tol * smax);
    if kept.is_empty() {
        return Err(Error::AllColumnsDropped);
    }
    let z = if dropped.is_empty() {
        z.clone()
    } else {
        z.select_columns(&kept)
    };
    Ok(PrunedInstruments { z, kept, dropped })
}

/// Outcome, endogenous variables and instruments after projecting out the
/// controls (`M2 = I - P2`).
#[derive(Debug, Clone)]
pub struct PartialledData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Orthonormal basis of the control space (n x d_c).
    controls_basis: DMatrix<f64>,
    pub names: ColumnNames,
}

impl PartialledData {
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn dx(&self) -> usize {
        self.x.ncols()
    }
    pub fn dz(&self) -> usize {
        self.z.ncols()
    }
    pub fn dc(&self) -> usize {
        self.controls_basis.ncols()
    }
    pub fn controls_basis(&self) -> &DMatrix<f64> {
        &self.controls_basis
    }

    /// Wraps already-partialled blocks (no controls).
    pub fn from_dataset_without_controls(data: &IVDataset) -> Self {
        Self {
            y: data.y.clone(),
            x: data.x.clone(),
            z: data.z.clone(),
            controls_basis: DMatrix::zeros(data.n(), 0),
            names: data.names.clone(),
        }
    }
}

fn controls_basis(controls: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if controls.ncols() == 0 {
        return Ok(DMatrix::zeros(controls.nrows(), 0));
    }
    let smax = linalg::max_singular_value(controls);
    let (q, _, dropped) = linalg::greedy_orthonormalize(controls, RANK_TOL * smax.max(f64::MIN_POSITIVE));
    if let Some(&j) = dropped.first() {
        return Err(Error::RankDeficientControls(j));
    }
    Ok(q)
}

/// Residualizes `y`, `x` and `z` on the controls by least squares.
/// Without controls the blocks are returned unchanged.
pub fn partial_out_controls(data: &IVDataset) -> Result<PartialledData> {
    if data.dc() == 0 {
        return Ok(PartialledData::from_dataset_without_controls(data));
    }
    let q = controls_basis(&data.controls)?;
    let y = linalg::residualize(&q, &DMatrix::from_column_slice(data.n(), 1, data.y.as_slice()));
    Ok(PartialledData {
        y: y.column(0).into_owned(),
        x: linalg::residualize(&q, &data.x),
        z: linalg::residualize(&q, &data.z),
        controls_basis: q,
        names: data.names.clone(),
    })
}

/// Conjugates `h` by `M2` and re-zeroes the diagonal, recording the removed
/// diagonal entries on the returned matrix.
pub fn partial_out_hat(h: &HatMatrix, controls: &DMatrix<f64>) -> Result<HatMatrix> {
    if controls.nrows() != h.n() {
        return Err(Error::Dimension(format!(
            "hat matrix is {0}x{0}, controls have {1} rows",
            h.n(),
            controls.nrows()
        )));
    }
    if controls.ncols() == 0 {
        return Ok(h.clone());
    }
    let q = controls_basis(controls)?;
    Ok(partial_out_hat_with_basis(h, &q))
}

pub(crate) fn partial_out_hat_with_basis(h: &HatMatrix, q: &DMatrix<f64>) -> HatMatrix {
    if q.ncols() == 0 {
        return h.clone();
    }
    // M2 H M2 = (H - Q Q'H) - (H - Q Q'H) Q Q'
    let left = h.matrix() - q * q.tr_mul(h.matrix());
    let conj = &left - (&left * q) * q.transpose();
    HatMatrix::from_conjugated(conj, h)
}
