//! Multiplier-bootstrap critical values for the sup-score statistic. With a
//! single instrument the bootstrap law is exactly half-normal.

use jkiv::bootstrap::{self, BootstrapSpec};
use jkiv::distributions;
use nalgebra::{DMatrix, DVector};

fn main() -> jkiv::Result<()> {
    let n = 50;
    let eps = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let z = DMatrix::from_element(n, 1, 1.0);
    for draws in [1_000, 10_000, 100_000] {
        let spec = BootstrapSpec { draws, seed: 11 };
        let crit = bootstrap::sup_score_critical(&eps, &z, 0.05, &spec)?;
        println!("B = {draws:>6}: 95% critical value {crit:.4}");
    }
    // |N(0, n)| / sqrt(n): the 0.975 normal quantile
    let exact = distributions::chi2_quantile(0.95, 1.0).sqrt();
    println!("half-normal quantile {exact:.4}");
    Ok(())
}
