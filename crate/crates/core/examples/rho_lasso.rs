//! Estimate the conditional slope of the endogenous variable on the null
//! residual with a cross-validated LASSO, and compare to the truth.

use jkiv::lasso;
use jkiv::rho::{self, BasisSpec, RhoMethod, RhoOptions};
use jkiv::sim::{gen_dgp, SimulationSpec};
use jkiv::PartialledData;

fn main() -> jkiv::Result<()> {
    let spec = SimulationSpec {
        n: 400,
        ..SimulationSpec::default()
    };
    let draw = gen_dgp(&spec, 2)?;
    let data = PartialledData::from_dataset_without_controls(&draw.data);
    let beta0 = [1.0];

    // the raw path: regress x on eps * [1, z]
    let eps = rho::null_residuals(&data.y, &data.x, &beta0)?;
    let mut design = BasisSpec::InstrumentsPlusIntercept.evaluate(&data.z)?;
    for mut col in design.column_iter_mut() {
        col.component_mul_assign(&eps);
    }
    let x = data.x.column(0).into_owned();
    if let Some(path) = lasso::cross_validate_path(&x, &design, 10, 3)? {
        println!(
            "lambda_max {:.4}, CV choice {:.5} (grid index {})",
            path.lambdas[0],
            path.best_lambda(),
            path.best
        );
    }

    for method in [RhoMethod::Lasso, RhoMethod::PostLasso] {
        let opts = RhoOptions {
            method,
            seed: 3,
            ..RhoOptions::default()
        };
        let model = rho::estimate_rho(&data, &beta0, &opts)?;
        let truth = draw.true_rho(&spec, &beta0);
        let err = (&model.rho_values - &truth).norm() / truth.norm();
        println!(
            "{:<10} support {:?}, relative error vs true slope {err:.3}",
            model.method, model.components[0].support
        );
    }
    Ok(())
}
