//! Build deleted-diagonal hat matrices and check the design diagnostics.

use jkiv::hat::{self, HatMatrix};
use jkiv::inference::{Pipeline, TestConfig};
use jkiv::sim::{gen_dgp, Regime, SimulationSpec, Strength};
use jkiv::PartialledData;

fn main() -> jkiv::Result<()> {
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz65,
        strength: Strength::Intermediate,
        ..SimulationSpec::default()
    };
    let draw = gen_dgp(&spec, 1)?;
    let z = draw.data.z();

    let ridge = hat::ridge_hat(z, 0.2)?;
    let lam = ridge.ridge_penalty().unwrap();
    println!("ridge penalty {lam:.4}");
    println!("effective dof {:.4} (cap n/5 = {})", hat::effective_dof(z, lam), z.nrows() / 5);
    let diag_max = (0..ridge.n()).map(|i| ridge.matrix()[(i, i)].abs()).fold(0.0, f64::max);
    println!("largest |diagonal| {diag_max}");

    let proj = hat::projection_hat_deleted(z)?;
    println!("projection hat trace before deletion {:.1}", proj.dof());

    // any square matrix can serve; its diagonal is dropped
    let custom = HatMatrix::custom(ridge.matrix() * 0.5)?;
    println!("custom hat kind {:?}", custom.kind());

    let data = PartialledData::from_dataset_without_controls(&draw.data);
    let pipeline = Pipeline::new(data, TestConfig::default())?;
    let d = pipeline.diagnostics(&[1.0], 25.0)?;
    println!(
        "leverage ratio {:.4}, first-stage ratio {:.4}, row/col {:.3}, eig ratio {:.4}",
        d.leverage_ratio, d.first_stage_ratio, d.row_col_ratio, d.eig_ratio
    );
    println!("flags {:?}", d.flags);
    Ok(())
}
