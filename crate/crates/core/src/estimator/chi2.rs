//! Chi-squared quantiles by safeguarded Newton iteration on the regularized
//! lower incomplete gamma function.

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * dof as f64, 0.5 * x)
    }
}

fn chi2_ln_pdf(dof: usize, x: f64) -> f64 {
    let k = 0.5 * dof as f64;
    (k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// `x` such that `P(chi2_dof <= x) = alpha`.
pub fn chi2_inv(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-squared needs at least one degree of freedom".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {alpha}")));
    }
    // Bracket the root, then Newton steps that fall back to bisection when
    // they leave the bracket.
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(dof, hi) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    let k = dof as f64;
    let z = wilson_hilferty_z(alpha);
    let wh = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    let mut x = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..200 {
        let f = chi2_cdf(dof, x) - alpha;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_ln_pdf(dof, x).exp();
        let newton = x - f / pdf;
        let next = if pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs() || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Rough standard-normal quantile, only used as a starting point.
fn wilson_hilferty_z(p: f64) -> f64 {
    let t = if p < 0.5 { (-2.0 * p.ln()).sqrt() } else { (-2.0 * (1.0 - p).ln()).sqrt() };
    let z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    if p < 0.5 {
        -z
    } else {
        z
    }
}
