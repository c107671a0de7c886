use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, StreamPurpose};
use crate::error::{EivError, Result};
use crate::linalg::{from_rows, symmetrize, to_rows};
use crate::model::NoiseFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// `a₀ᵢ = μ_a + L gᵢ`, `gᵢ` seeded standard normal, drawn once per `(m, seed)`.
    GaussianFixed,
    /// Deterministic bounded design with exactly matching first and second moments.
    Grid,
}

/// A complete, serializable description of a Monte Carlo experiment.
///
/// Matrices are nested arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimStudySpec {
    pub n: usize,
    pub d: usize,
    pub x0: Vec<Vec<f64>>,
    pub sigma: f64,
    pub noise: NoiseFamily,
    pub design: DesignKind,
    pub mu_a: Vec<f64>,
    pub va_target: Vec<Vec<f64>>,
    pub reps: usize,
    pub base_seed: u64,
    pub m_schedule: Vec<usize>,
    /// Directions `u` for the ellipsoids; defaults to the standard basis of `R^d`.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    /// Nominal ellipsoid levels.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

fn default_levels() -> Vec<f64> {
    vec![0.90, 0.95, 0.99]
}

impl SimStudySpec {
    /// `n = 3`, `d = 2`, `X₀` uniform on `[−1, 1]` from the seed,
    /// `μ_a = (½, ½, ½)`, `V_A = I₃ + 0.3·J`, `σ = 0.3`, gaussian errors.
    pub fn default_study(base_seed: u64) -> Self {
        let (n, d) = (3, 2);
        let mut rng = stream_rng(base_seed, 0, StreamPurpose::TrueParameter, 0);
        let x0 = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let va_target = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.3 } else { 0.3 }).collect())
            .collect();
        SimStudySpec {
            n,
            d,
            x0,
            sigma: 0.3,
            noise: NoiseFamily::Gaussian,
            design: DesignKind::GaussianFixed,
            mu_a: vec![0.5; n],
            va_target,
            reps: 500,
            base_seed,
            m_schedule: vec![250, 1000, 4000],
            directions: Vec::new(),
            levels: default_levels(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: SimStudySpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            EivError::spec(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn x0_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.x0)
    }

    pub fn va_target_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.va_target)
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu_a)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Explicit directions, or the standard basis when none are given.
    pub fn direction_vectors(&self) -> Vec<DVector<f64>> {
        if self.directions.is_empty() {
            (0..self.d)
                .map(|j| {
                    let mut e = DVector::zeros(self.d);
                    e[j] = 1.0;
                    e
                })
                .collect()
        } else {
            self.directions.iter().map(|u| DVector::from_column_slice(u)).collect()
        }
    }

    pub fn with_x0(mut self, x0: &DMatrix<f64>) -> Self {
        self.x0 = to_rows(x0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n, self.d);
        if n == 0 {
            return Err(EivError::spec("n", "must be at least 1"));
        }
        if d == 0 {
            return Err(EivError::spec("d", "must be at least 1"));
        }
        check_rows("x0", &self.x0, n, d)?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EivError::spec("sigma", "must be positive and finite"));
        }
        self.noise.validate()?;
        if self.mu_a.len() != n {
            return Err(EivError::spec("mu_a", format!("expected length {n}, got {}", self.mu_a.len())));
        }
        if self.mu_a.iter().any(|v| !v.is_finite()) {
            return Err(EivError::spec("mu_a", "entries must be finite"));
        }
        check_rows("va_target", &self.va_target, n, n)?;
        let va = self.va_target_matrix();
        if (&va - va.transpose()).amax() > 1e-12 * va.amax().max(1.0) {
            return Err(EivError::spec("va_target", "must be symmetric"));
        }
        if Cholesky::new(symmetrize(&va)).is_none() {
            return Err(EivError::spec("va_target", "must be positive definite"));
        }
        if self.reps == 0 {
            return Err(EivError::spec("reps", "must be at least 1"));
        }
        if self.m_schedule.is_empty() {
            return Err(EivError::spec("m_schedule", "must list at least one m"));
        }
        for (i, &m) in self.m_schedule.iter().enumerate() {
            if m < n + d {
                return Err(EivError::spec(format!("m_schedule[{i}]"), format!("m = {m} is below n + d = {}", n + d)));
            }
        }
        for (i, u) in self.directions.iter().enumerate() {
            if u.len() != d {
                return Err(EivError::spec(format!("directions[{i}]"), format!("expected length {d}")));
            }
            if u.iter().any(|v| !v.is_finite()) || u.iter().all(|&v| v == 0.0) {
                return Err(EivError::spec(format!("directions[{i}]"), "must be finite and nonzero"));
            }
        }
        if self.levels.is_empty() {
            return Err(EivError::spec("levels", "must list at least one level"));
        }
        for (i, &l) in self.levels.iter().enumerate() {
            if !(l > 0.0 && l < 1.0) {
                return Err(EivError::spec(format!("levels[{i}]"), "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

fn check_rows(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<()> {
    if rows.len() != nrows {
        return Err(EivError::spec(field, format!("expected {nrows} rows, got {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(EivError::spec(format!("{field}[{i}]"), format!("expected {ncols} entries, got {}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(EivError::spec(format!("{field}[{i}]"), "entries must be finite"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_study_is_valid_and_seeded() {
        let s = SimStudySpec::default_study(11);
        s.validate().unwrap();
        assert!(s.x0.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(s, SimStudySpec::default_study(11));
        assert_ne!(s.x0, SimStudySpec::default_study(12).x0);
        assert_eq!(s.direction_vectors().len(), 2);
    }

    #[test]
    fn json_roundtrip() {
        let s = SimStudySpec::default_study(3);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SimStudySpec::from_json(&text).unwrap(), s);
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut s = SimStudySpec::default_study(3);
        s.reps = 0;
        let text = serde_json::to_string(&s).unwrap();
        match SimStudySpec::from_json(&text) {
            Err(EivError::SpecInvalid { field, .. }) => assert_eq!(field, "reps"),
            other => panic!("{other:?}"),
        }
        let bad = text.replace("\"reps\":0", "\"reps\":\"many\"");
        match SimStudySpec::from_json(&bad) {
            Err(EivError::SpecInvalid { field, .. }) => assert_eq!(field, "reps"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn asymmetric_noise_family_rejected() {
        let s = SimStudySpec::default_study(3);
        let text = serde_json::to_string(&s).unwrap().replace("\"gaussian\"", "\"exponential\"");
        match SimStudySpec::from_json(&text) {
            Err(EivError::SpecInvalid { field, .. }) => assert!(field.starts_with("noise"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn va_target_must_be_spd() {
        let mut s = SimStudySpec::default_study(3);
        s.va_target[0][0] = -1.0;
        assert!(matches!(s.validate(), Err(EivError::SpecInvalid { field, .. }) if field == "va_target"));
    }
}
