#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use jkiv::sim::{gen_dgp, Regime, SimulationSpec, Strength};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub schema: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn strong_spec(n: usize) -> SimulationSpec {
    SimulationSpec {
        n,
        regime: Regime::Dz10,
        strength: Strength::Strong,
        ..SimulationSpec::default()
    }
}

/// CSV with columns y, x, z0..z9 and a control `c`, plus its schema.
pub fn fixture(seed_rep: u64) -> Fixture {
    let draw = gen_dgp(&strong_spec(150), seed_rep).unwrap();
    let d = draw.data;
    let mut csv = String::from("y,x,c");
    for j in 0..d.dz() {
        write!(csv, ",z{j}").unwrap();
    }
    csv.push('\n');
    for i in 0..d.n() {
        write!(csv, "{},{},{}", d.y()[i], d.x()[(i, 0)], (i % 3) as f64 - 1.0).unwrap();
        for j in 0..d.dz() {
            write!(csv, ",{}", d.z()[(i, j)]).unwrap();
        }
        csv.push('\n');
    }
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, csv).unwrap();
    let schema = dir.path().join("schema.toml");
    write_schema(&schema, "y", "x", &(0..10).map(|j| format!("z{j}")).collect::<Vec<_>>(), &["c"]);
    Fixture { dir, data, schema }
}

pub fn write_schema(path: &Path, y: &str, x: &str, z: &[String], c: &[&str]) {
    let quote = |v: &[String]| v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ");
    let c: Vec<String> = c.iter().map(|s| s.to_string()).collect();
    let text = format!(
        "outcome = \"{y}\"\nendogenous = [\"{x}\"]\ninstruments = [{}]\ncontrols = [{}]\n",
        quote(z),
        quote(&c)
    );
    std::fs::write(path, text).unwrap();
}
