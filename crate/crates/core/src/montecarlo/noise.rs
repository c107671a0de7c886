use nalgebra::DMatrix;

use super::rng::{stream_rng, StreamPurpose};
use super::spec::SimStudySpec;
use crate::error::Result;

/// Error matrices `(Ã, B̃)` for replication `rep_index` at size `m`.
///
/// Row `i` is `z̃ᵢᵀ = [ãᵢᵀ, b̃ᵢᵀ]`, drawn coordinate by coordinate from the
/// unit-variance family and scaled by `σ`.
pub fn generate_noise(spec: &SimStudySpec, m: usize, rep_index: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sampler = spec.noise.sampler()?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = stream_rng(spec.base_seed, m, StreamPurpose::Noise, rep_index);
    let mut a = DMatrix::zeros(m, n);
    let mut b = DMatrix::zeros(m, d);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = spec.sigma * sampler.sample(&mut rng);
        }
        for j in 0..d {
            b[(i, j)] = spec.sigma * sampler.sample(&mut rng);
        }
    }
    Ok((a, b))
}
