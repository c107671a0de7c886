//! Total least squares for the multivariate errors-in-variables model
//! `AX ≈ B` with errors in both `A` and `B`.
//!
//! The crate covers the estimator itself ([`tls`]), nuisance estimation and
//! confidence ellipsoids ([`inference`]) and seeded simulation studies
//! ([`montecarlo`]).
//!
//! ```
//! use eiv_tls::{make_true_model, tls_solve, SolverConfig};
//! use nalgebra::DMatrix;
//!
//! let a0 = DMatrix::from_fn(20, 2, |i, j| ((i + 3 * j) as f64).sin());
//! let x0 = DMatrix::from_row_slice(2, 1, &[1.5, -0.5]);
//! let data = make_true_model(a0, x0.clone(), 0.01).unwrap().noise_free().unwrap();
//! let fit = tls_solve(&data, &SolverConfig::for_dataset(&data)).unwrap();
//! assert!((fit.x_hat - x0).norm() < 1e-10);
//! ```

pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod stats;
pub mod tls;

/// Version tag embedded in every serialized report.
pub const SCHEMA_VERSION: &str = "1.0";

pub use error::{EivError, Result};
pub use model::{make_true_model, validate_dataset, Dims, EivDataset, NoiseFamily, TrueModel};
pub use tls::{tls_solve, tls_solve_svd, FitWarning, SolveMethod, SolverConfig, TlsFit};
