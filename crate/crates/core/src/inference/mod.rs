//! Nuisance estimation, the limit covariance of the normalized estimator and
//! confidence ellipsoids for `X₀u`.

mod chi2;
mod covariance;
mod ellipsoid;
mod nuisance;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use covariance::{
    covariance_cross_analytic, covariance_su_analytic, covariance_su_sandwich, gamma_apply,
    gamma_component_cross_covariances, vec_covariance_analytic, AsymptoticCovariance,
    CovarianceMethod, GammaSystem,
};
pub use ellipsoid::{confidence_ellipsoid, ConfidenceEllipsoid};
pub use nuisance::{estimate_nuisance, estimate_sigma2, estimate_va, NuisanceEstimates};
