//! Selecting instruments by LASSO inflates the first-stage F statistic.

fn main() -> jkiv::Result<()> {
    let table = jkiv::sim::fstat_demo(1000, &[1, 5, 10, 20, 40], 100, 1)?;
    println!("true instruments: mean F {:.3}", table.true_instrument_f);
    for row in &table.rows {
        println!("k = {:>2}: mean F {:.3}", row.k, row.mean_f.unwrap_or(f64::NAN));
    }
    Ok(())
}
