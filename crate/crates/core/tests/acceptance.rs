//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments (`cargo test --test acceptance -- 2 5`)
//! to run a subset.

use std::time::Instant;

use jkiv::bootstrap::{self, BootstrapSpec};
use jkiv::cli;
use jkiv::hat;
use jkiv::inference::{self, Pipeline, TauRule, TestKind};
use jkiv::lasso::{self, LassoOptions};
use jkiv::sim::experiment::{null_results, replication_config};
use jkiv::sim::{self, gen_dgp, ErrorDist, PowerMode, Regime, SimRho, SimulationSpec, Strength};
use jkiv::stats::{self, FirstStage};
use jkiv::PartialledData;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ALPHA: f64 = 0.05;
/// `z_{0.975}^2`, the 95% point of chi-squared with one degree of freedom.
const CHI2_1_95: f64 = 3.841_458_820_694_124;
/// `z_{0.975}`.
const HALF_NORMAL_95: f64 = 1.959_963_984_540_054;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn thresholding() -> TestKind {
    TestKind::Thresholding(TauRule::Quantile(0.75))
}

fn rate(results: &[Vec<jkiv::TestResult>], k: usize) -> f64 {
    results.iter().filter(|r| r[k].reject).count() as f64 / results.len() as f64
}

/// P(chi2_1 <= x) = erf(sqrt(x / 2)).
fn chi2_1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::erf::erf((x / 2.0).sqrt())
    }
}

fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn c1_null_chi2() -> Outcome {
    let spec = SimulationSpec {
        n: 300,
        regime: Regime::Dz65,
        rho1: 0.0,
        rho2: 0.3,
        strength: Strength::Strong,
        reps: 5000,
        tests: vec![TestKind::Jk],
        errors: ErrorDist::Gaussian,
        rho: SimRho::Oracle,
        seed: 101,
        ..SimulationSpec::default()
    };
    let res = null_results(&spec, 0..spec.reps).unwrap();
    let stats: Vec<f64> = res.iter().map(|r| r[0].statistic).collect();
    let rej = stats.iter().filter(|&&s| s > CHI2_1_95).count() as f64 / stats.len() as f64;
    let ks = ks_distance(stats, chi2_1_cdf);
    outcome(
        ks < 0.03 && within(rej, 0.05, 0.012),
        format!("KS {ks:.4} (< 0.03), rejection {rej:.4} (0.05 +/- 0.012)"),
    )
}

fn size_cell(spec: &SimulationSpec, targets: &[(TestKind, f64)], tol: f64) -> Outcome {
    let res = null_results(spec, 0..spec.reps).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, &(kind, target)) in targets.iter().enumerate() {
        assert_eq!(spec.tests[k], kind);
        let r = rate(&res, k);
        pass &= within(r, target, tol);
        parts.push(format!("{kind} {r:.4} (target {target} +/- {tol})"));
    }
    outcome(pass, parts.join(", "))
}

fn c2_weak_size() -> Outcome {
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz10,
        rho1: 0.2,
        rho2: 0.3,
        strength: Strength::Weak,
        reps: 2000,
        draws: 500,
        tests: vec![TestKind::Jk, TestKind::SupScore, thresholding()],
        seed: 202,
        ..SimulationSpec::default()
    };
    size_cell(
        &spec,
        &[(TestKind::Jk, 0.0516), (TestKind::SupScore, 0.0352), (thresholding(), 0.0406)],
        0.02,
    )
}

fn c3_strong_size() -> Outcome {
    let spec = SimulationSpec {
        n: 500,
        regime: Regime::Dz30,
        rho1: 0.2,
        rho2: 0.3,
        strength: Strength::Strong,
        reps: 2000,
        draws: 500,
        tests: vec![TestKind::Jk],
        seed: 303,
        ..SimulationSpec::default()
    };
    size_cell(&spec, &[(TestKind::Jk, 0.0502)], 0.02)
}

fn c4_fstat() -> Outcome {
    let ks = [1, 5, 10, 20, 40];
    let t = sim::fstat_demo(1000, &ks, 500, 404).unwrap();
    let f: Vec<f64> = ks.iter().map(|&k| t.mean_f(k).unwrap_or(f64::NAN)).collect();
    let monotone = f.windows(2).all(|w| w[1] <= w[0]);
    let pass = within(t.true_instrument_f, 5.234, 1.0) && f[0] >= 3.0 * t.true_instrument_f && monotone;
    outcome(
        pass,
        format!(
            "true F {:.3} (5.234 +/- 1), F(k) {:?}, k=1 ratio {:.2} (>= 3), non-increasing {monotone}",
            t.true_instrument_f,
            f.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            f[0] / t.true_instrument_f
        ),
    )
}

fn c5_power_shape() -> Outcome {
    let spec = SimulationSpec {
        n: 500,
        regime: Regime::Dz65,
        rho1: 0.2,
        rho2: 0.3,
        strength: Strength::Intermediate,
        reps: 500,
        tests: vec![TestKind::Jk, TestKind::SupScore, thresholding()],
        seed: 505,
        ..SimulationSpec::default()
    };
    let table = sim::power_curve(&spec, &[-2.0, 0.0, 3.0], PowerMode::Calibrated { null_reps: 2000 }).unwrap();
    let p = |off: f64, k: TestKind| table.frequency(off, k).unwrap();
    let se = (0.05 * 0.95 / spec.reps as f64).sqrt();
    let a = spec.tests.iter().all(|&k| within(p(0.0, k), 0.05, 2.0 * se));
    let b = p(-2.0, TestKind::Jk) > p(-2.0, TestKind::SupScore);
    let c = p(3.0, thresholding()) > p(3.0, TestKind::Jk);
    outcome(
        a && b && c,
        format!(
            "(a) offset 0: jk {:.3} sup {:.3} thr {:.3} (0.05 +/- {:.4}) {a}; (b) offset -2: jk {:.3} > sup {:.3} {b}; (c) offset +3: thr {:.3} > jk {:.3} {c}",
            p(0.0, TestKind::Jk),
            p(0.0, TestKind::SupScore),
            p(0.0, thresholding()),
            2.0 * se,
            p(-2.0, TestKind::Jk),
            p(-2.0, TestKind::SupScore),
            p(3.0, thresholding()),
            p(3.0, TestKind::Jk),
        ),
    )
}

fn c6_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(5..200);
        let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * rng.random_range(0.1..3.0));
        let pi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pi_hat = DMatrix::from_column_slice(n, 1, pi.as_slice());
        let pi_eps = DMatrix::from_fn(n, 1, |i, _| pi[i] * eps[i]);
        let general = stats::jk_statistic(&eps, &FirstStage { pi_hat, pi_eps }, stats::SING_TOL).value;
        // direct scalar formula
        let num: f64 = eps.iter().zip(pi.iter()).map(|(e, p)| e * p).sum();
        let den: f64 = eps.iter().zip(pi.iter()).map(|(e, p)| (e * p).powi(2)).sum();
        let direct = num * num / den;
        worst = worst.max((general - direct).abs() / direct.abs().max(1.0));
    }
    let spec = SimulationSpec {
        n: 400,
        regime: Regime::Dz30,
        strength: Strength::Strong,
        beta_true: vec![1.0, -0.5],
        reps: 1000,
        tests: vec![TestKind::Jk],
        rho: SimRho::Oracle,
        seed: 616,
        ..SimulationSpec::default()
    };
    let res = null_results(&spec, 0..spec.reps).unwrap();
    // chi2_2 upper alpha point: -2 ln alpha
    let crit = -2.0 * ALPHA.ln();
    let size = res.iter().filter(|r| r[0].statistic > crit).count() as f64 / res.len() as f64;
    outcome(
        worst <= 1e-10 && within(size, 0.05, 0.02),
        format!("max relative gap {worst:.2e} (<= 1e-10), d_x = 2 size {size:.4} (0.05 +/- 0.02)"),
    )
}

fn kkt_violation(y: &DVector<f64>, d: &DMatrix<f64>, phi: &DVector<f64>, lam: f64) -> f64 {
    let n = y.len() as f64;
    let g = d.tr_mul(&(y - d * phi)) * (-2.0 / n);
    (0..phi.len())
        .map(|j| {
            if phi[j] == 0.0 {
                (g[j].abs() - lam).max(0.0)
            } else {
                (g[j] + lam * phi[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn c7_lasso() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_kkt = 0.0_f64;
    let mut wide = 0;
    let mut failures = 0;
    let mut zero_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(10..80);
        let p = rng.random_range(1..120);
        if p > n {
            wide += 1;
        }
        let d = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| d[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let lmax = 2.0 * d.tr_mul(&y).amax() / n as f64;
        let lam = lmax * 10f64.powf(rng.random_range(-2.0..0.0));
        match lasso::lasso_fit_with(&y, &d, lam, &LassoOptions::default()) {
            Ok(fit) => worst_kkt = worst_kkt.max(kkt_violation(&y, &d, &fit.coef, lam)),
            Err(_) => failures += 1,
        }
        for scale in [1.0, 1.5] {
            zero_ok &= lasso::lasso_fit(&y, &d, lmax * scale).unwrap().iter().all(|&v| v == 0.0);
        }
    }
    // orthogonal design: D'D / n = diag(a), solution S(c_j, lambda / 2) / a_j
    let n = 64;
    let p = 8;
    let mut worst_closed = 0.0_f64;
    for trial in 0..20 {
        let mut cols = Vec::new();
        for j in 0..p {
            let a = 0.5 + (j + trial) as f64 * 0.25;
            // Walsh-type orthogonal columns
            cols.push(DVector::from_fn(n, |i, _| {
                let bit = (i >> (j % 6)) & 1;
                let sign = if j < 6 { if bit == 0 { 1.0 } else { -1.0 } } else if j == 6 { 1.0 } else {
                    let b0 = i & 1;
                    let b1 = (i >> 1) & 1;
                    if b0 ^ b1 == 0 { 1.0 } else { -1.0 }
                };
                sign * a.sqrt()
            }));
        }
        let d = DMatrix::from_columns(&cols);
        let g = d.tr_mul(&d) / n as f64;
        let off: f64 = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| g[(i, j)].abs()).fold(0.0, f64::max);
        assert!(off < 1e-12, "design not orthogonal");
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lam = 0.3;
        let fit = lasso::lasso_fit(&y, &d, lam).unwrap();
        for j in 0..p {
            let c = d.column(j).dot(&y) / n as f64;
            let closed = (c.abs() - lam / 2.0).max(0.0) * c.signum() / g[(j, j)];
            worst_closed = worst_closed.max((fit[j] - closed).abs());
        }
    }
    outcome(
        failures == 0 && worst_kkt <= 1e-6 && zero_ok && worst_closed <= 1e-8,
        format!(
            "200 instances ({wide} with d_b > n): {failures} failures, worst KKT {worst_kkt:.2e} (<= 1e-6); zero at lambda_max {zero_ok}; orthogonal closed form gap {worst_closed:.2e} (<= 1e-8)"
        ),
    )
}

fn c8_hat_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_dof_excess = f64::NEG_INFINITY;
    let mut diag_zero = true;
    let mut worst_proj = 0.0_f64;
    for _ in 0..30 {
        let n = rng.random_range(30..150);
        let dz = rng.random_range(n / 5 + 1..n + 20);
        let z = DMatrix::from_fn(n, dz, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = hat::ridge_hat(&z, 0.2).unwrap();
        let lam = h.ridge_penalty().unwrap();
        // independent trace of Z (Z'Z + lam I)^{-1} Z'
        let a = z.tr_mul(&z) + DMatrix::identity(dz, dz) * lam;
        let full = &z * a.lu().solve(&z.transpose()).unwrap();
        worst_dof_excess = worst_dof_excess.max(full.trace() - n as f64 / 5.0);
        diag_zero &= (0..n).all(|i| h.matrix()[(i, i)] == 0.0);

        let k = rng.random_range(1..n / 2);
        let zp = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t = DMatrix::from_fn(k, k, |i, j| rng.sample::<f64, _>(StandardNormal) + if i == j { 3.0 } else { 0.0 });
        let p1 = hat::projection_hat_deleted(&zp).unwrap();
        let p2 = hat::projection_hat_deleted(&(&zp * t)).unwrap();
        diag_zero &= (0..n).all(|i| p1.matrix()[(i, i)] == 0.0);
        worst_proj = worst_proj.max((p1.matrix() - p2.matrix()).amax());
    }
    outcome(
        worst_dof_excess <= 1e-4 && diag_zero && worst_proj <= 1e-9,
        format!(
            "max dof - n/5 {worst_dof_excess:.2e} (<= 1e-4), zero diagonals {diag_zero}, projection invariance gap {worst_proj:.2e} (<= 1e-9)"
        ),
    )
}

fn c9_sup_score_bootstrap() -> Outcome {
    let n = 40;
    let eps = DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 } else { -1.0 });
    let z = DMatrix::from_element(n, 1, 2.0);
    let crit = bootstrap::sup_score_critical(&eps, &z, ALPHA, &BootstrapSpec { draws: 100_000, seed: 909 }).unwrap();
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz10,
        reps: 2000,
        draws: 1000,
        tests: vec![TestKind::SupScore],
        errors: ErrorDist::Gaussian,
        seed: 919,
        ..SimulationSpec::default()
    };
    let res = null_results(&spec, 0..spec.reps).unwrap();
    let size = rate(&res, 0);
    outcome(
        within(crit, HALF_NORMAL_95, 0.05) && within(size, 0.05, 0.02),
        format!("half-normal critical value {crit:.4} (1.9600 +/- 0.05), Gaussian-null size {size:.4} (0.05 +/- 0.02)"),
    )
}

fn render(args: &[&str], threads: usize, dir: &std::path::Path, tag: &str) -> (Vec<u8>, Option<Vec<u8>>) {
    let out = dir.join(format!("{tag}-{threads}.json"));
    let mut v: Vec<String> = std::iter::once("jkiv".to_string()).chain(args.iter().map(|s| s.to_string())).collect();
    v.extend(["--threads".into(), threads.to_string(), "--output".into(), out.to_str().unwrap().into()]);
    let cfg = cli::parse_args(v).unwrap();
    let report = cli::execute_with_threads(&cfg).unwrap();
    cli::emit(&cfg, &report).unwrap();
    let json = std::fs::read(&out).unwrap();
    let csv = std::fs::read(cli::csv_path(&out)).ok();
    (strip_output(json), csv)
}

/// The output path itself is part of the embedded config; blank it so runs
/// written to different files can be compared.
fn strip_output(json: Vec<u8>) -> Vec<u8> {
    let mut v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    v["config"]["output"] = serde_json::Value::Null;
    serde_json::to_vec_pretty(&v).unwrap()
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path();
    // dataset for the data-driven commands
    let draw = gen_dgp(&SimulationSpec { n: 120, strength: Strength::Strong, ..SimulationSpec::default() }, 0).unwrap();
    let d = &draw.data;
    let mut csv = String::from("y,x");
    for j in 0..d.dz() {
        csv.push_str(&format!(",z{j}"));
    }
    csv.push('\n');
    for i in 0..d.n() {
        csv.push_str(&format!("{},{}", d.y()[i], d.x()[(i, 0)]));
        for j in 0..d.dz() {
            csv.push_str(&format!(",{}", d.z()[(i, j)]));
        }
        csv.push('\n');
    }
    let data = data_dir.join("d.csv");
    std::fs::write(&data, csv).unwrap();
    let schema = data_dir.join("s.toml");
    let z: Vec<String> = (0..d.dz()).map(|j| format!("\"z{j}\"")).collect();
    std::fs::write(&schema, format!("outcome = \"y\"\nendogenous = [\"x\"]\ninstruments = [{}]\n", z.join(","))).unwrap();
    let (ds, ss) = (data.to_str().unwrap(), schema.to_str().unwrap());

    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("size", vec!["simulate", "--reps", "30", "--draws", "300", "--seed", "10"]),
        (
            "power",
            vec![
                "simulate", "--experiment", "power", "--reps", "10", "--null-reps", "20", "--offset-points", "5",
                "--draws", "200", "--seed", "11",
            ],
        ),
        ("fstat", vec!["fstat-demo", "--n", "300", "--reps", "10", "--seed", "12"]),
        ("test", vec!["test", "--data", ds, "--schema", ss, "--beta0", "1", "--kind", "thresholding", "--seed", "13"]),
        (
            "invert",
            vec![
                "invert", "--data", ds, "--schema", ss, "--kind", "thresholding", "--grid-lo", "0", "--grid-hi", "2",
                "--grid-points", "21", "--draws", "200", "--seed", "14",
            ],
        ),
        ("diagnose", vec!["diagnose", "--data", ds, "--schema", ss, "--beta0", "1", "--seed", "15"]),
    ];
    let mut mismatched = Vec::new();
    for (tag, args) in &runs {
        let one = render(args, 1, dir.path(), tag);
        let eight = render(args, 8, dir.path(), tag);
        let again = render(args, 1, dir.path(), &format!("{tag}-again"));
        if one != eight || one != again {
            mismatched.push(*tag);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{} commands byte-identical at 1 and 8 threads; mismatches {:?}", runs.len(), mismatched),
    )
}

fn coverage_check() -> Outcome {
    let spec = SimulationSpec {
        n: 200,
        regime: Regime::Dz10,
        strength: Strength::Strong,
        reps: 200,
        tests: vec![TestKind::Jk],
        seed: 1111,
        ..SimulationSpec::default()
    };
    let beta = spec.beta_true[0];
    let grid = inference::uniform_grid(beta - 1.5, beta + 1.5, 61).unwrap();
    let covered = (0..spec.reps)
        .filter(|&rep| {
            let draw = gen_dgp(&spec, rep).unwrap();
            let cfg = replication_config(&spec, &draw, rep, &[beta]);
            let data = PartialledData::from_dataset_without_controls(&draw.data);
            let p = Pipeline::new(data, cfg).unwrap();
            inference::invert_ci(&p, &grid, TestKind::Jk).unwrap().covers(beta)
        })
        .count();
    let cov = covered as f64 / spec.reps as f64;
    outcome(within(cov, 0.95, 0.04), format!("JK coverage {cov:.3} over {} reps (0.95 +/- 0.04)", spec.reps))
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "null chi-squared calibration", c1_null_chi2),
        ("2", "size cell, weak identification", c2_weak_size),
        ("3", "size cell, strong identification", c3_strong_size),
        ("4", "first-stage F demonstration", c4_fstat),
        ("5", "power-curve shape", c5_power_shape),
        ("6", "oracle equivalence", c6_oracle_equivalence),
        ("7", "LASSO solver correctness", c7_lasso),
        ("8", "hat-matrix contract", c8_hat_contract),
        ("9", "sup-score bootstrap validity", c9_sup_score_bootstrap),
        ("10", "determinism", c10_determinism),
        ("coverage", "CI inversion coverage", coverage_check),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{status} criterion {id} ({name}): {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
