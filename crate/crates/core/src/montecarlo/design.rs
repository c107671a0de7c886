use nalgebra::{Cholesky, DMatrix};
use rand_distr::{Distribution, StandardNormal};

use super::rng::{stream_rng, StreamPurpose};
use super::spec::{DesignKind, SimStudySpec};
use crate::error::{EivError, Result};
use crate::linalg::symmetrize;

/// The fixed true input `A₀` (m×n) for a study at size `m`.
///
/// Rows have mean `μ_a` and second moment `V_A`: approximately for
/// `gaussian_fixed`, exactly for `grid`.
pub fn generate_design(spec: &SimStudySpec, m: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.n;
    if m < n + 1 {
        return Err(EivError::DomainError(format!("design needs m > n, got m = {m}")));
    }
    let mu = spec.mu_vector();
    let cov = symmetrize(&(spec.va_target_matrix() - &mu * mu.transpose()));
    let l = Cholesky::new(cov).ok_or(EivError::InvalidMoments)?.l();

    let g = match spec.design {
        DesignKind::GaussianFixed => {
            let mut rng = stream_rng(spec.base_seed, m, StreamPurpose::Design, 0);
            DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
        }
        DesignKind::Grid => whitened_grid(m, n),
    };
    let mut a0 = g * l.transpose();
    for mut row in a0.row_iter_mut() {
        row += mu.transpose();
    }
    Ok(a0)
}

/// m×n matrix with column means exactly 0 and `(1/m)GᵀG = I`.
///
/// Column 0 is the equispaced symmetric lattice; further columns are cosine
/// modes; the block is then orthonormalized in row-average inner product.
fn whitened_grid(m: usize, n: usize) -> DMatrix<f64> {
    let mf = m as f64;
    let step = (3.0 / (mf * mf - 1.0)).sqrt();
    let mut g = DMatrix::from_fn(m, n, |i, j| {
        if j == 0 {
            (2.0 * i as f64 - (mf - 1.0)) * step
        } else {
            std::f64::consts::SQRT_2
                * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / mf).cos()
        }
    });
    // Modified Gram–Schmidt against the constant vector and earlier columns.
    for j in 0..n {
        let mean = g.column(j).sum() / mf;
        g.column_mut(j).add_scalar_mut(-mean);
        for k in 0..j {
            let proj = g.column(j).dot(&g.column(k)) / mf;
            let ck = g.column(k).into_owned();
            g.column_mut(j).axpy(-proj, &ck, 1.0);
        }
        let norm = (g.column(j).norm_squared() / mf).sqrt();
        g.column_mut(j).scale_mut(1.0 / norm);
    }
    g
}
