//! Chi-squared and F distribution functions.
//!
//! CDFs come from the regularized incomplete gamma and beta functions; the
//! quantiles are found here by safeguarded Newton iteration.

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

pub fn chi2_cdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * k, 0.5 * x)
    }
}

pub fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(0.5 * k, 0.5 * x)
    }
}

fn chi2_pdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a)).exp()
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        beta_reg(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
    }
}

pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        beta_reg(0.5 * d2, 0.5 * d1, d2 / (d1 * x + d2))
    }
}

fn f_pdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln()
        - ln_beta(0.5 * d1, 0.5 * d2);
    ln.exp()
}

/// Root of `cdf(x) = p` on `(0, inf)`; Newton steps that leave the current
/// bracket fall back to bisection.
fn invert(p: f64, start: f64, cdf: impl Fn(f64) -> f64, pdf: impl Fn(f64) -> f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1), got {p}");
    let mut lo = 0.0;
    let mut hi = start.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let newton = if d > 0.0 { x - f / d } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.max(1.0) || hi - lo <= 1e-15 * hi.max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Inverse CDF of chi-squared with `k` degrees of freedom.
pub fn chi2_quantile(p: f64, k: f64) -> f64 {
    assert!(k > 0.0, "degrees of freedom must be positive");
    invert(p, k, |x| chi2_cdf(x, k), |x| chi2_pdf(x, k))
}

pub fn f_quantile(p: f64, d1: f64, d2: f64) -> f64 {
    assert!(d1 > 0.0 && d2 > 0.0, "degrees of freedom must be positive");
    invert(p, 1.0, |x| f_cdf(x, d1, d2), |x| f_pdf(x, d1, d2))
}
