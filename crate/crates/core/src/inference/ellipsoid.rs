use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::chi2::chi2_quantile;
use super::covariance::AsymptoticCovariance;
use crate::error::{EivError, Result};
use crate::linalg::symmetrize;
use crate::tls::TlsFit;

/// `{v : (v − center)ᵀ shape⁻¹ (v − center) ≤ radius2}`.
#[derive(Debug, Clone)]
pub struct ConfidenceEllipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub radius2: f64,
    pub level: f64,
    chol: Cholesky<f64, Dyn>,
}

impl ConfidenceEllipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, radius2: f64, level: f64) -> Result<Self> {
        if shape.shape() != (center.len(), center.len()) {
            return Err(EivError::dims("shape must be square with the center's dimension"));
        }
        if !shape.iter().all(|v| v.is_finite()) {
            return Err(EivError::SingularShape);
        }
        let chol = Cholesky::new(symmetrize(&shape)).ok_or(EivError::SingularShape)?;
        Ok(ConfidenceEllipsoid { center, shape, radius2, level, chol })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Squared Mahalanobis distance of `v` from the center.
    pub fn distance2(&self, v: &DVector<f64>) -> f64 {
        let diff = v - &self.center;
        diff.dot(&self.chol.solve(&diff))
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.distance2(v) <= self.radius2
    }

    /// Whitened coordinates `L⁻¹(v − center)` with `shape = LLᵀ`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let diff = v - &self.center;
        self.chol
            .l()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor is nonsingular")
    }

    /// For a one-dimensional ellipsoid, the interval `center ± √(shape·radius2)`.
    pub fn interval(&self) -> Option<(f64, f64)> {
        (self.dim() == 1).then(|| {
            let half = (self.shape[(0, 0)] * self.radius2).sqrt();
            (self.center[0] - half, self.center[0] + half)
        })
    }
}

/// Asymptotic ellipsoid for `X₀u`: center `X̂u`, shape `S_u/m`, radius² `χ²_{n, level}`.
pub fn confidence_ellipsoid(
    fit: &TlsFit,
    cov: &AsymptoticCovariance,
    m: usize,
    level: f64,
) -> Result<ConfidenceEllipsoid> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EivError::DomainError(format!("level must lie in (0, 1), got {level}")));
    }
    let n = fit.x_hat.nrows();
    if cov.u.len() != fit.x_hat.ncols() || cov.s_u.shape() != (n, n) {
        return Err(EivError::dims("covariance does not match the fit"));
    }
    if m == 0 {
        return Err(EivError::DomainError("m must be positive".into()));
    }
    let center = &fit.x_hat * &cov.u;
    let shape = &cov.s_u / m as f64;
    let radius2 = chi2_quantile(n, level)?;
    ConfidenceEllipsoid::new(center, shape, radius2, level)
}
