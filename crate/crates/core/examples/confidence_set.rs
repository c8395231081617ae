//! Confidence sets for a scalar coefficient by inverting each test over a grid.

use jkiv::inference::{self, Pipeline, TauRule, TestConfig, TestKind};
use jkiv::sim::{gen_dgp, SimulationSpec, Strength};
use jkiv::PartialledData;

fn main() -> jkiv::Result<()> {
    let spec = SimulationSpec {
        n: 300,
        strength: Strength::Strong,
        ..SimulationSpec::default()
    };
    let draw = gen_dgp(&spec, 4)?;
    let data = PartialledData::from_dataset_without_controls(&draw.data);
    let pipeline = Pipeline::new(data, TestConfig { seed: 5, ..TestConfig::default() })?;
    let grid = inference::uniform_grid(-0.5, 2.5, 121)?;
    for kind in [
        TestKind::Jk,
        TestKind::SupScore,
        TestKind::Thresholding(TauRule::Quantile(0.75)),
        TestKind::AndersonRubin,
    ] {
        let set = inference::invert_ci(&pipeline, &grid, kind)?;
        println!(
            "{:<16} {:?}  covers true beta: {}",
            kind.to_string(),
            set.intervals,
            set.covers(spec.beta_true[0])
        );
    }
    Ok(())
}
