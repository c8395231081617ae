//! Load a CSV dataset with a column schema, partial out the controls and run
//! every test at one hypothesized coefficient.
//!
//! Run with `cargo run --example quickstart`.

use std::fmt::Write as _;

use jkiv::data::{self, Schema};
use jkiv::inference::{Pipeline, TauRule, TestConfig, TestKind};
use jkiv::sim::{gen_dgp, Regime, SimulationSpec, Strength};

fn main() -> jkiv::Result<()> {
    // a synthetic draw stands in for real data
    let spec = SimulationSpec {
        n: 300,
        regime: Regime::Dz65,
        strength: Strength::Strong,
        ..SimulationSpec::default()
    };
    let draw = gen_dgp(&spec, 0)?;
    let d = &draw.data;

    let mut csv = String::from("sales,price,region");
    for j in 0..d.dz() {
        write!(csv, ",z{j}").unwrap();
    }
    csv.push('\n');
    for i in 0..d.n() {
        write!(csv, "{},{},{}", d.y()[i], d.x()[(i, 0)], (i % 4) as f64).unwrap();
        for j in 0..d.dz() {
            write!(csv, ",{}", d.z()[(i, j)]).unwrap();
        }
        csv.push('\n');
    }
    let dir = std::env::temp_dir().join("jkiv-quickstart");
    std::fs::create_dir_all(&dir).map_err(|e| jkiv::Error::Config(e.to_string()))?;
    let path = dir.join("data.csv");
    std::fs::write(&path, csv).map_err(|e| jkiv::Error::Config(e.to_string()))?;

    let instruments: Vec<String> = (0..d.dz()).map(|j| format!("\"z{j}\"")).collect();
    let schema = Schema::from_toml_str(&format!(
        "outcome = \"sales\"\nendogenous = [\"price\"]\ninstruments = [{}]\ncontrols = [\"region\"]\n",
        instruments.join(", ")
    ))?;
    let dataset = data::load_csv(&path, &schema)?;
    let partialled = data::partial_out_controls(&dataset)?;
    println!("n = {}, instruments = {}, controls = {}", partialled.n(), partialled.dz(), partialled.dc());

    let pipeline = Pipeline::new(partialled, TestConfig { seed: 7, ..TestConfig::default() })?;
    println!("ridge penalty {:?}, effective dof {:.2}", pipeline.hat().ridge_penalty(), pipeline.hat().dof());

    let kinds = [
        TestKind::Jk,
        TestKind::SupScore,
        TestKind::Thresholding(TauRule::Quantile(0.75)),
        TestKind::AndersonRubin,
    ];
    for beta0 in [1.0, 0.0] {
        println!("beta0 = {beta0}");
        for r in pipeline.evaluate(&[beta0], &kinds)? {
            println!(
                "  {:<16} stat {:>9.4}  crit {:>8.4}  reject {}",
                r.kind.to_string(),
                r.statistic,
                r.critical_value,
                r.reject
            );
        }
    }
    Ok(())
}
