//! Rejection frequencies away from the null, with nominal and with
//! size-calibrated critical values.

use jkiv::sim::{self, PowerMode, Regime, SimulationSpec, Strength};

fn main() -> jkiv::Result<()> {
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz30,
        strength: Strength::Intermediate,
        reps: 100,
        draws: 500,
        seed: 9,
        ..SimulationSpec::default()
    };
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    for mode in [PowerMode::Nominal, PowerMode::Calibrated { null_reps: 200 }] {
        let table = sim::power_curve(&spec, &offsets, mode)?;
        println!("{mode:?}");
        for &off in &offsets {
            let row: Vec<String> = spec
                .tests
                .iter()
                .map(|&t| format!("{t} {:.2}", table.frequency(off, t).unwrap()))
                .collect();
            println!("  offset {off:>4}: {}", row.join("  "));
        }
    }
    Ok(())
}
