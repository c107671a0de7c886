//! Limit covariance of `√m(X̂ − X₀)u`.
//!
//! The normalized estimator behaves like `V_A⁻¹Γ(X₀)` where
//! `Γ = (Γ₁, …, Γ₅)` is the Gaussian limit of `m^{-1/2} Σᵢ Wᵢ` with
//!
//! ```text
//! Wᵢ = (a₀ᵢãᵢᵀ, a₀ᵢb̃ᵢᵀ, ãᵢãᵢᵀ − σ²Iₙ, ãᵢb̃ᵢᵀ, b̃ᵢb̃ᵢᵀ − σ²I_d)
//! Γ(X) = Γ₁X − Γ₂ + Γ₃X − Γ₄ − X(I + XᵀX)⁻¹(XᵀΓ₃X − XᵀΓ₄ − Γ₄ᵀX + Γ₅)
//! ```
//!
//! Under normal errors the five components are independent, and each one's
//! contribution to `cov(Γ(X)u, Γ(X)v)` follows from Gaussian second and
//! fourth moments. With `w = Xu`, `w' = Xv`, `P = X(I + XᵀX)⁻¹Xᵀ`,
//! `C = X(I + XᵀX)⁻¹`, `R = Iₙ − P`:
//!
//! ```text
//! Γ₁:  σ²(wᵀw') V_A
//! Γ₂:  σ²(uᵀv)  V_A
//! Γ₃:  σ⁴ R (w'wᵀ + (wᵀw')Iₙ) R
//! Γ₄:  σ⁴ [(uᵀv) R² + (wᵀw') CCᵀ − R w'uᵀCᵀ − C v wᵀ R]
//! Γ₅:  σ⁴ C (v uᵀ + (uᵀv) I_d) Cᵀ
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{EivError, Result};
use crate::linalg::{gram_plus_identity, symmetrize};
use crate::model::EivDataset;
use crate::tls::{row_scores, TlsFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMethod {
    AnalyticNormal,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCovariance {
    pub u: DVector<f64>,
    pub s_u: DMatrix<f64>,
    pub method: CovarianceMethod,
    pub x_used: DMatrix<f64>,
    pub va_used: DMatrix<f64>,
    /// Only the analytic route takes `σ²` as an input.
    pub sigma2_used: Option<f64>,
}

/// One realization of the five-matrix system `(Γ₁, …, Γ₅)` (or a single `Wᵢ`).
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSystem {
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub g3: DMatrix<f64>,
    pub g4: DMatrix<f64>,
    pub g5: DMatrix<f64>,
}

impl GammaSystem {
    pub fn zeros(n: usize, d: usize) -> Self {
        GammaSystem {
            g1: DMatrix::zeros(n, n),
            g2: DMatrix::zeros(n, d),
            g3: DMatrix::zeros(n, n),
            g4: DMatrix::zeros(n, d),
            g5: DMatrix::zeros(d, d),
        }
    }

    /// The row summand `Wᵢ` for true input `a0`, errors `(a_err, b_err)`.
    pub fn row_summand(a0: &DVector<f64>, a_err: &DVector<f64>, b_err: &DVector<f64>, sigma2: f64) -> Self {
        let (n, d) = (a0.len(), b_err.len());
        GammaSystem {
            g1: a0 * a_err.transpose(),
            g2: a0 * b_err.transpose(),
            g3: a_err * a_err.transpose() - DMatrix::identity(n, n) * sigma2,
            g4: a_err * b_err.transpose(),
            g5: b_err * b_err.transpose() - DMatrix::identity(d, d) * sigma2,
        }
    }

    /// All entries, component by component, each column-stacked.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.g1, &self.g2, &self.g3, &self.g4, &self.g5]
            .iter()
            .flat_map(|m| m.iter().copied())
            .collect()
    }

    /// Component index (0-based) of every entry in [`flatten`](Self::flatten).
    pub fn component_labels(n: usize, d: usize) -> Vec<usize> {
        [n * n, n * d, n * n, n * d, d * d]
            .iter()
            .enumerate()
            .flat_map(|(k, &len)| std::iter::repeat_n(k, len))
            .collect()
    }

    pub fn scale(&mut self, c: f64) {
        for m in [&mut self.g1, &mut self.g2, &mut self.g3, &mut self.g4, &mut self.g5] {
            *m *= c;
        }
    }
}

impl std::ops::AddAssign<&GammaSystem> for GammaSystem {
    fn add_assign(&mut self, rhs: &GammaSystem) {
        self.g1 += &rhs.g1;
        self.g2 += &rhs.g2;
        self.g3 += &rhs.g3;
        self.g4 += &rhs.g4;
        self.g5 += &rhs.g5;
    }
}

impl std::ops::AddAssign for GammaSystem {
    fn add_assign(&mut self, rhs: GammaSystem) {
        *self += &rhs;
    }
}

/// `Γ(X) = Γ₁X − Γ₂ + Γ₃X − Γ₄ − X(I_d + XᵀX)⁻¹(XᵀΓ₃X − XᵀΓ₄ − Γ₄ᵀX + Γ₅)`.
pub fn gamma_apply(g: &GammaSystem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let shapes = [
        (g.g1.shape(), (n, n)),
        (g.g2.shape(), (n, d)),
        (g.g3.shape(), (n, n)),
        (g.g4.shape(), (n, d)),
        (g.g5.shape(), (d, d)),
    ];
    for (k, (got, want)) in shapes.iter().enumerate() {
        if got != want {
            return Err(EivError::dims(format!(
                "Gamma_{} is {}x{}, expected {}x{}",
                k + 1,
                got.0,
                got.1,
                want.0,
                want.1
            )));
        }
    }
    let inner = x.transpose() * &g.g3 * x - x.transpose() * &g.g4 - g.g4.transpose() * x + &g.g5;
    let chol = gram_plus_identity(x);
    Ok(&g.g1 * x - &g.g2 + &g.g3 * x - &g.g4 - x * chol.solve(&inner))
}

fn check_inputs(
    x: &DMatrix<f64>,
    va: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<Cholesky<f64, Dyn>> {
    let (n, d) = x.shape();
    if va.shape() != (n, n) {
        return Err(EivError::dims(format!("V_A must be {n}x{n}")));
    }
    if u.len() != d {
        return Err(EivError::dims(format!("u has length {} but d = {d}", u.len())));
    }
    if u.iter().all(|&c| c == 0.0) {
        return Err(EivError::ZeroDirection);
    }
    Cholesky::new(symmetrize(va)).ok_or(EivError::SingularVA)
}

/// Per-component contributions to `cov(Γ(X)u, Γ(X)v)` under normal errors.
/// Entry `k` of the result belongs to `Γ_{k+1}`.
pub fn gamma_component_cross_covariances(
    x: &DMatrix<f64>,
    va: &DMatrix<f64>,
    sigma2: f64,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<[DMatrix<f64>; 5]> {
    let (n, d) = x.shape();
    if va.shape() != (n, n) || u.len() != d || v.len() != d {
        return Err(EivError::dims("X, V_A, u and v have inconsistent shapes"));
    }
    let s4 = sigma2 * sigma2;
    let chol = gram_plus_identity(x);
    let c = chol.solve(&x.transpose()).transpose(); // X(I + XᵀX)⁻¹
    let r = DMatrix::identity(n, n) - &c * x.transpose();
    let w = x * u;
    let wp = x * v;
    let uv = u.dot(v);
    let ww = w.dot(&wp);

    let g1 = va * (sigma2 * ww);
    let g2 = va * (sigma2 * uv);
    let g3 = &r * (&wp * w.transpose() + DMatrix::identity(n, n) * ww) * &r * s4;
    let g4 = (&r * &r * uv + &c * c.transpose() * ww
        - &r * &wp * u.transpose() * c.transpose()
        - &c * v * w.transpose() * &r)
        * s4;
    let g5 = &c * (v * u.transpose() + DMatrix::identity(d, d) * uv) * c.transpose() * s4;
    Ok([g1, g2, g3, g4, g5])
}

/// `V_A⁻¹ cov(Γ(X)u, Γ(X)v) V_A⁻¹` under normal errors.
pub fn covariance_cross_analytic(
    x: &DMatrix<f64>,
    va: &DMatrix<f64>,
    sigma2: f64,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0) {
        return Err(EivError::NonPositiveVariance(sigma2));
    }
    let va_chol = Cholesky::new(symmetrize(va)).ok_or(EivError::SingularVA)?;
    let parts = gamma_component_cross_covariances(x, va, sigma2, u, v)?;
    let (n, _) = x.shape();
    let total = parts.iter().fold(DMatrix::zeros(n, n), |acc, p| acc + p);
    // V_A⁻¹ T V_A⁻¹
    let left = va_chol.solve(&total);
    Ok(va_chol.solve(&left.transpose()).transpose())
}

/// `S_u = cov(V_A⁻¹Γ(X)u)` under normal errors.
pub fn covariance_su_analytic(
    x: &DMatrix<f64>,
    va: &DMatrix<f64>,
    sigma2: f64,
    u: &DVector<f64>,
) -> Result<AsymptoticCovariance> {
    check_inputs(x, va, u)?;
    let s_u = symmetrize(&covariance_cross_analytic(x, va, sigma2, u, u)?);
    Ok(AsymptoticCovariance {
        u: u.clone(),
        s_u,
        method: CovarianceMethod::AnalyticNormal,
        x_used: x.clone(),
        va_used: va.clone(),
        sigma2_used: Some(sigma2),
    })
}

/// Covariance of the column-stacked `vec(V_A⁻¹Γ(X))`, assembled block by
/// block from basis directions: block `(j, k)` is the cross covariance of
/// columns `j` and `k`.
pub fn vec_covariance_analytic(x: &DMatrix<f64>, va: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n * d, n * d);
    let basis = |j: usize| {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        e
    };
    for j in 0..d {
        for k in 0..d {
            let block = covariance_cross_analytic(x, va, sigma2, &basis(j), &basis(k))?;
            out.view_mut((j * n, k * n), (n, n)).copy_from(&block);
        }
    }
    Ok(symmetrize(&out))
}

/// Empirical sandwich `V̂_A⁻¹ [(1/m) Σᵢ (ŝᵢu)(ŝᵢu)ᵀ] V̂_A⁻¹`, `ŝᵢ = s(aᵢ, bᵢ; X̂)`.
pub fn covariance_su_sandwich(
    data: &EivDataset,
    fit: &TlsFit,
    va_hat: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<AsymptoticCovariance> {
    let va_chol = check_inputs(&fit.x_hat, va_hat, u)?;
    let n = data.dims().n;
    let m = data.dims().m as f64;
    let scores = row_scores(data, &fit.x_hat)?;
    let zero = DMatrix::zeros(n, n);
    let meat = crate::linalg::tree_sum(scores.len(), &zero, |i, acc| {
        let su = &scores[i] * u;
        acc.ger(1.0, &su, &su, 1.0);
    }) / m;
    let left = va_chol.solve(&meat);
    let s_u = symmetrize(&va_chol.solve(&left.transpose()).transpose());
    Ok(AsymptoticCovariance {
        u: u.clone(),
        s_u,
        method: CovarianceMethod::Sandwich,
        x_used: fit.x_hat.clone(),
        va_used: va_hat.clone(),
        sigma2_used: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use approx::assert_relative_eq;

    fn fixture() -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let x = DMatrix::from_row_slice(3, 2, &[0.4, -0.7, 1.2, 0.1, -0.3, 0.9]);
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.8, 0.0, -0.2, 0.4, 1.1]);
        (x, &l * l.transpose(), 0.25)
    }

    /// Independent closed form obtained by splitting ã into its regression on
    /// the residual r = Xᵀã − b̃ plus an independent remainder:
    /// cov(Γ(X)u, Γ(X)v) = σ² uᵀ(I + XᵀX)v · [V_A + σ²(Iₙ + XXᵀ)⁻¹].
    fn compact_cross(x: &DMatrix<f64>, va: &DMatrix<f64>, s2: f64, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let (n, d) = x.shape();
        let gram = DMatrix::identity(d, d) + x.transpose() * x;
        let outer = (DMatrix::identity(n, n) + x * x.transpose()).try_inverse().unwrap();
        let scal = s2 * (u.transpose() * gram * v)[(0, 0)];
        (va + outer * s2) * scal
    }

    #[test]
    fn gamma_apply_examples() {
        let (x, _, _) = fixture();
        let mut g = GammaSystem::zeros(3, 2);
        assert_eq!(gamma_apply(&g, &x).unwrap(), DMatrix::zeros(3, 2));
        g.g1 = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        g.g2 = DMatrix::from_fn(3, 2, |i, j| (i as f64) - j as f64);
        g.g3 = DMatrix::from_fn(3, 3, |i, j| ((i * j) as f64).sin());
        g.g4 = DMatrix::from_fn(3, 2, |i, j| 0.5 * (i + j) as f64);
        g.g5 = DMatrix::from_fn(2, 2, |i, j| (i as f64) * 0.3 + j as f64);
        let at0 = gamma_apply(&g, &DMatrix::zeros(3, 2)).unwrap();
        assert_relative_eq!(at0, -(&g.g2 + &g.g4), epsilon = 1e-15);

        let mut only2 = GammaSystem::zeros(3, 2);
        only2.g2[(1, 0)] = 1.0;
        let out = gamma_apply(&only2, &x).unwrap();
        assert_relative_eq!(out, -&only2.g2, epsilon = 1e-15);
    }

    #[test]
    fn gamma_apply_shape_error() {
        let mut g = GammaSystem::zeros(3, 2);
        g.g5 = DMatrix::zeros(3, 3);
        assert!(matches!(gamma_apply(&g, &DMatrix::zeros(3, 2)), Err(EivError::DimensionMismatch(_))));
    }

    #[test]
    fn components_sum_to_compact_form() {
        let (x, va, s2) = fixture();
        let dirs = [
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[0.3, -2.0]),
            DVector::from_column_slice(&[-1.5, 0.7]),
        ];
        for u in &dirs {
            for v in &dirs {
                let parts = gamma_component_cross_covariances(&x, &va, s2, u, v).unwrap();
                let total = parts.iter().fold(DMatrix::zeros(3, 3), |acc, p| acc + p);
                assert_relative_eq!(total, compact_cross(&x, &va, s2, u, v), epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn analytic_at_zero_x() {
        let (_, va, s2) = fixture();
        let x = DMatrix::zeros(3, 2);
        let u = DVector::from_column_slice(&[0.6, -0.8]);
        let got = covariance_su_analytic(&x, &va, s2, &u).unwrap().s_u;
        let vinv = va.clone().try_inverse().unwrap();
        let uu = u.norm_squared();
        let expect = &vinv * (s2 * uu) + &vinv * &vinv * (s2 * s2 * uu);
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn analytic_lower_bound_and_scaling() {
        let (x, va, s2) = fixture();
        let u = DVector::from_column_slice(&[0.2, 1.3]);
        let s = covariance_su_analytic(&x, &va, s2, &u).unwrap().s_u;
        let vinv = va.clone().try_inverse().unwrap();
        let gap = &s - vinv * (s2 * u.norm_squared());
        assert!(min_eigenvalue(&gap) >= -1e-10 * s.trace());
        let s3 = covariance_su_analytic(&x, &va, s2, &(&u * 3.0)).unwrap().s_u;
        assert_relative_eq!(s3, &s * 9.0, max_relative = 1e-12);
    }

    #[test]
    fn analytic_errors() {
        let (x, va, s2) = fixture();
        let zero = DVector::zeros(2);
        assert_eq!(covariance_su_analytic(&x, &va, s2, &zero).unwrap_err(), EivError::ZeroDirection);
        let u = DVector::from_column_slice(&[1.0, 0.0]);
        let singular = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(covariance_su_analytic(&x, &singular, s2, &u).unwrap_err(), EivError::SingularVA);
    }

    #[test]
    fn vec_covariance_blocks_match_directional() {
        let (x, va, s2) = fixture();
        let full = vec_covariance_analytic(&x, &va, s2).unwrap();
        let u = DVector::from_column_slice(&[0.7, -0.4]);
        // cov(Xu) = (uᵀ ⊗ I) cov(vec X) (u ⊗ I)
        let mut kron = DMatrix::zeros(3, 6);
        for j in 0..2 {
            kron.view_mut((0, j * 3), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * u[j]));
        }
        let via_full = &kron * &full * kron.transpose();
        let direct = covariance_su_analytic(&x, &va, s2, &u).unwrap().s_u;
        assert_relative_eq!(via_full, direct, epsilon = 1e-12);
    }
}
