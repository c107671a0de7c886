//! Domain types for the functional errors-in-variables model `A = A₀ + Ã`,
//! `B = B₀ + B̃`, `A₀X₀ = B₀`, with i.i.d. rows of error variance `σ²I`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{EivError, Result};

/// Smallest admissible Student-t degrees of freedom (finite moments of order 6 with margin).
pub const MIN_STUDENT_DF: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub d: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(EivError::dims(format!("n = {n} and d = {d} must both be at least 1")));
        }
        if m < n + d {
            return Err(EivError::TooFewRows { m, required: n + d });
        }
        Ok(Dims { m, n, d })
    }

    /// `m = n + d`: the smallest problem the estimator accepts.
    pub fn is_minimal(&self) -> bool {
        self.m == self.n + self.d
    }
}

/// Observed pair `(A, B)`; row `i` of both matrices is observation `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EivDataset {
    dims: Dims,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl EivDataset {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// The compound matrix `[A, B]`.
    pub fn compound(&self) -> DMatrix<f64> {
        let Dims { m, n, d } = self.dims;
        let mut c = DMatrix::zeros(m, n + d);
        c.view_mut((0, 0), (m, n)).copy_from(&self.a);
        c.view_mut((0, n), (m, d)).copy_from(&self.b);
        c
    }

    /// Largest absolute entry of `[A, B]`, used to scale round-off tolerances.
    pub fn scale(&self) -> f64 {
        self.a.amax().max(self.b.amax())
    }
}

pub fn validate_dataset(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<EivDataset> {
    if a.nrows() != b.nrows() {
        return Err(EivError::dims(format!(
            "A has {} rows but B has {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    check_finite("A", &a)?;
    check_finite("B", &b)?;
    let dims = Dims::new(a.nrows(), a.ncols(), b.ncols())?;
    Ok(EivDataset { dims, a, b })
}

fn check_finite(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(EivError::NonFinite { matrix: name, row: i, col: j });
            }
        }
    }
    Ok(())
}

/// The noise-free model. `B₀` is always derived as `A₀X₀`, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    dims: Dims,
    a0: DMatrix<f64>,
    x0: DMatrix<f64>,
    sigma2: f64,
}

impl TrueModel {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn x0(&self) -> &DMatrix<f64> {
        &self.x0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn b0(&self) -> DMatrix<f64> {
        &self.a0 * &self.x0
    }

    /// `(1/m) A₀ᵀA₀`, the finite-sample value of `V_A`.
    pub fn design_moment(&self) -> DMatrix<f64> {
        self.a0.transpose() * &self.a0 / self.dims.m as f64
    }

    /// `(A₀, A₀X₀)` as an observed dataset.
    pub fn noise_free(&self) -> Result<EivDataset> {
        validate_dataset(self.a0.clone(), self.b0())
    }

    /// Adds error matrices to the true model.
    pub fn observe(&self, a_err: &DMatrix<f64>, b_err: &DMatrix<f64>) -> Result<EivDataset> {
        validate_dataset(&self.a0 + a_err, self.b0() + b_err)
    }
}

pub fn make_true_model(a0: DMatrix<f64>, x0: DMatrix<f64>, sigma2: f64) -> Result<TrueModel> {
    if a0.ncols() != x0.nrows() {
        return Err(EivError::dims(format!(
            "A0 has {} columns but X0 has {} rows",
            a0.ncols(),
            x0.nrows()
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(EivError::NonPositiveVariance(sigma2));
    }
    check_finite("A0", &a0)?;
    check_finite("X0", &x0)?;
    // A0 alone need not satisfy m >= n + d (an identity design is a valid model).
    if a0.nrows() == 0 || x0.ncols() == 0 || a0.ncols() == 0 {
        return Err(EivError::dims("A0 and X0 must be non-empty"));
    }
    let dims = Dims { m: a0.nrows(), n: a0.ncols(), d: x0.ncols() };
    Ok(TrueModel { dims, a0, x0, sigma2 })
}

/// Symmetric error law, scaled to unit variance per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFamily {
    Gaussian,
    StudentT { df: f64 },
    Uniform,
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseFamily::StudentT { df } if !(df >= MIN_STUDENT_DF) || !df.is_finite() => {
                Err(EivError::spec(
                    "noise.df",
                    format!("student-t needs df >= {MIN_STUDENT_DF}, got {df}"),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        Ok(match *self {
            NoiseFamily::Gaussian => NoiseSampler::Gaussian,
            NoiseFamily::StudentT { df } => NoiseSampler::StudentT {
                dist: StudentT::new(df).map_err(|e| EivError::spec("noise.df", e.to_string()))?,
                scale: ((df - 2.0) / df).sqrt(),
            },
            NoiseFamily::Uniform => NoiseSampler::Uniform,
        })
    }

    pub fn label(&self) -> String {
        match self {
            NoiseFamily::Gaussian => "gaussian".into(),
            NoiseFamily::StudentT { df } => format!("student-t({df})"),
            NoiseFamily::Uniform => "uniform".into(),
        }
    }
}

/// Draws zero-mean, unit-variance, symmetric variates.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSampler {
    Gaussian,
    StudentT { dist: StudentT<f64>, scale: f64 },
    Uniform,
}

impl NoiseSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSampler::Gaussian => StandardNormal.sample(rng),
            NoiseSampler::StudentT { dist, scale } => dist.sample(rng) * scale,
            NoiseSampler::Uniform => {
                let u: f64 = rng.random();
                (2.0 * u - 1.0) * 3f64.sqrt()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validate_dataset_shapes() {
        let ds = validate_dataset(DMatrix::from_element(5, 2, 1.0), DMatrix::from_element(5, 1, 0.5))
            .unwrap();
        assert_eq!(ds.dims(), Dims { m: 5, n: 2, d: 1 });
        assert!(!ds.dims().is_minimal());
    }

    #[test]
    fn validate_dataset_errors() {
        let e = validate_dataset(DMatrix::zeros(5, 2), DMatrix::zeros(4, 1)).unwrap_err();
        assert!(matches!(e, EivError::DimensionMismatch(_)));
        let e = validate_dataset(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap_err();
        assert_eq!(e, EivError::TooFewRows { m: 2, required: 3 });
        let mut a = DMatrix::zeros(4, 2);
        a[(3, 1)] = f64::NAN;
        let e = validate_dataset(a, DMatrix::zeros(4, 1)).unwrap_err();
        assert_eq!(e, EivError::NonFinite { matrix: "A", row: 3, col: 1 });
        let mut b = DMatrix::zeros(4, 1);
        b[(0, 0)] = f64::INFINITY;
        assert!(matches!(
            validate_dataset(DMatrix::zeros(4, 2), b),
            Err(EivError::NonFinite { matrix: "B", .. })
        ));
    }

    #[test]
    fn minimal_rows_flagged() {
        let ds = validate_dataset(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).unwrap();
        assert!(ds.dims().is_minimal());
    }

    #[test]
    fn true_model_identity_design() {
        let x0 = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let tm = make_true_model(DMatrix::identity(2, 2), x0, 0.04).unwrap();
        assert_eq!(tm.b0(), DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
    }

    #[test]
    fn true_model_errors() {
        let x0 = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(
            make_true_model(DMatrix::identity(2, 2), x0, 0.0).unwrap_err(),
            EivError::NonPositiveVariance(0.0)
        );
        let e = make_true_model(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1), 1.0).unwrap_err();
        assert!(matches!(e, EivError::DimensionMismatch(_)));
    }

    #[test]
    fn noise_free_dataset_is_exact() {
        let a0 = DMatrix::from_fn(7, 3, |i, j| (i as f64 + 1.0).sin() * (j as f64 + 2.0));
        let x0 = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        let tm = make_true_model(a0, x0, 0.1).unwrap();
        let ds = tm.noise_free().unwrap();
        let resid = ds.b() - tm.a0() * tm.x0();
        assert_eq!(resid.amax(), 0.0);
    }

    #[test]
    fn student_t_needs_enough_moments() {
        assert!(NoiseFamily::StudentT { df: 5.0 }.validate().is_err());
        assert!(NoiseFamily::StudentT { df: 9.0 }.validate().is_ok());
    }

    #[test]
    fn unknown_family_rejected_by_serde() {
        let r: std::result::Result<NoiseFamily, _> = serde_json::from_str(r#"{"kind":"exponential"}"#);
        assert!(r.is_err());
        let t: NoiseFamily = serde_json::from_str(r#"{"kind":"student_t","df":9}"#).unwrap();
        assert_eq!(t, NoiseFamily::StudentT { df: 9.0 });
    }

    #[test]
    fn samplers_have_unit_variance() {
        let families = [NoiseFamily::Gaussian, NoiseFamily::StudentT { df: 9.0 }, NoiseFamily::Uniform];
        for (k, fam) in families.iter().enumerate() {
            let s = fam.sampler().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
            let n = 1_000_000;
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for _ in 0..n {
                let v = s.sample(&mut rng);
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            let var = sumsq / n as f64 - mean * mean;
            assert!(mean.abs() < 4e-3, "{fam:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.01, "{fam:?} var {var}");
        }
    }
}
