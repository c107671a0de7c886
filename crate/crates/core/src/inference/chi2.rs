use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{EivError, Result};

/// `P(χ²_df ≤ x)` via the regularized lower incomplete gamma function.
pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

fn chi2_ln_pdf(df: usize, x: f64) -> f64 {
    let k = df as f64 / 2.0;
    (k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// Inverse chi-square CDF: Newton on the CDF, falling back to bisection
/// whenever a step leaves the current bracket.
pub fn chi2_quantile(df: usize, p: f64) -> Result<f64> {
    if df == 0 {
        return Err(EivError::DomainError("chi-square needs df >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(EivError::DomainError(format!("probability must lie in (0, 1), got {p}")));
    }
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while chi2_cdf(df, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(df, x) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chi2_ln_pdf(df, x).exp();
        let newton = x - f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-14 * x.max(1.0) || hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
