use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{EivError, Result};
use crate::linalg::{gram_plus_identity, is_positive_definite, min_eigenvalue, symmetrize};
use crate::model::EivDataset;

/// Relative size of a negative `σ̂²` still attributed to round-off.
const NEGATIVE_ROUNDOFF: f64 = 1e-12;
/// `V̂_A` counts as positive definite only when its smallest eigenvalue clears
/// this many multiples of its sampling noise `σ̂²·√(n/m)`.
const VA_NOISE_FLOOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceEstimates {
    pub sigma2_hat: f64,
    pub va_hat: DMatrix<f64>,
    /// `V̂_A` is positive definite with its smallest eigenvalue above the
    /// sampling-noise floor, i.e. the design is distinguishable from pure noise.
    pub va_hat_pd: bool,
    /// `σ̂²` came out negative within round-off and was set to zero.
    pub sigma2_clamped: bool,
}

/// Row averages `(aaᵀ̄, abᵀ̄, bbᵀ̄)`.
fn moments(data: &EivDataset) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let m = data.dims().m as f64;
    let (a, b) = (data.a(), data.b());
    (a.tr_mul(a) / m, a.tr_mul(b) / m, b.tr_mul(b) / m)
}

fn sigma2_raw(data: &EivDataset, x_hat: &DMatrix<f64>) -> Result<(f64, f64)> {
    let dims = data.dims();
    if x_hat.shape() != (dims.n, dims.d) {
        return Err(EivError::dims(format!(
            "X_hat is {}x{} but the dataset needs {}x{}",
            x_hat.nrows(),
            x_hat.ncols(),
            dims.n,
            dims.d
        )));
    }
    let (aa, ab, bb) = moments(data);
    let xt_aa_x = x_hat.transpose() * &aa * x_hat;
    let inner = &bb - x_hat.transpose() * &ab * 2.0 + &xt_aa_x;
    let chol = gram_plus_identity(x_hat);
    let d = dims.d as f64;
    let value = chol.solve(&inner).trace() / d;
    let scale = (bb.trace() + xt_aa_x.trace()) / d;
    Ok((value, scale))
}

/// `σ̂² = (1/d) tr[(bbᵀ̄ − 2X̂ᵀabᵀ̄ + X̂ᵀaaᵀ̄X̂)(I_d + X̂ᵀX̂)⁻¹]`.
pub fn estimate_sigma2(data: &EivDataset, x_hat: &DMatrix<f64>) -> Result<f64> {
    sigma2_checked(data, x_hat).map(|(v, _)| v)
}

fn sigma2_checked(data: &EivDataset, x_hat: &DMatrix<f64>) -> Result<(f64, bool)> {
    let (value, scale) = sigma2_raw(data, x_hat)?;
    if value >= 0.0 {
        Ok((value, false))
    } else if value >= -NEGATIVE_ROUNDOFF * scale {
        Ok((0.0, true))
    } else {
        Err(EivError::NegativeVariance { value, scale })
    }
}

/// `V̂_A = aaᵀ̄ − σ̂² I_n`, symmetrized.
pub fn estimate_va(data: &EivDataset, sigma2_hat: f64) -> Result<DMatrix<f64>> {
    if !(sigma2_hat >= 0.0) {
        return Err(EivError::DomainError(format!("sigma2_hat must be >= 0, got {sigma2_hat}")));
    }
    let (aa, _, _) = moments(data);
    let n = data.dims().n;
    Ok(symmetrize(&(aa - DMatrix::identity(n, n) * sigma2_hat)))
}

pub fn estimate_nuisance(data: &EivDataset, x_hat: &DMatrix<f64>) -> Result<NuisanceEstimates> {
    let (sigma2_hat, sigma2_clamped) = sigma2_checked(data, x_hat)?;
    let va_hat = estimate_va(data, sigma2_hat)?;
    let dims = data.dims();
    let floor = VA_NOISE_FLOOR * sigma2_hat * (dims.n as f64 / dims.m as f64).sqrt();
    let va_hat_pd = is_positive_definite(&va_hat) && min_eigenvalue(&va_hat) > floor;
    Ok(NuisanceEstimates { sigma2_hat, va_hat, va_hat_pd, sigma2_clamped })
}
