//! Monte Carlo size of each test, run in two batches and pooled.

use jkiv::sim::{self, Regime, SimulationSpec, Strength};

fn main() -> jkiv::Result<()> {
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz10,
        strength: Strength::Weak,
        reps: 200,
        draws: 500,
        seed: 2024,
        ..SimulationSpec::default()
    };
    let first = sim::size_experiment_range(&spec, 0..100)?;
    let second = sim::size_experiment_range(&spec, 100..200)?;
    let table = first.merge(&second)?;
    assert_eq!(table, sim::size_experiment(&spec)?);
    table.write_csv(std::io::stdout())?;
    Ok(())
}
