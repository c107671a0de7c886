use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::design::generate_design;
use super::noise::generate_noise;
use super::spec::SimStudySpec;
use crate::error::Result;
use crate::inference::GammaSystem;
use crate::stats::{correlation_from_covariance, ks_normal_fit, mean_and_covariance, KsResult};

pub const CLT_KS_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltEntry {
    /// 1-based component index of `Wᵢ`.
    pub component: usize,
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub mean_within_4se: bool,
    /// `None` when the replication count is too small for a KS test.
    pub ks: Option<KsResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub schema_version: String,
    pub kind: String,
    pub m: usize,
    pub reps: usize,
    pub noise: String,
    pub base_seed: u64,
    pub sufficient_sample: bool,
    pub ks_alpha: f64,
    pub ks_pass_fraction: Option<f64>,
    pub means_within_4se: bool,
    /// Largest |correlation| between entries of different components.
    pub max_cross_correlation: Option<f64>,
    pub cross_correlation_band: f64,
    pub entries: Vec<CltEntry>,
}

impl CltReport {
    pub fn cross_correlation_ok(&self) -> Option<bool> {
        self.max_cross_correlation.map(|c| c <= self.cross_correlation_band)
    }
}

/// Simulates `m^{-1/2} Σᵢ Wᵢ` over `reps` replications at the spec's design and
/// summarizes how close every entry is to a centered normal law.
pub fn clt_check_w(spec: &SimStudySpec, m: usize, reps: usize) -> Result<CltReport> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let a0 = generate_design(spec, m)?;
    let sigma2 = spec.sigma2();
    let root_m = (m as f64).sqrt();

    let samples: Vec<DVector<f64>> = (0..reps)
        .map(|rep| {
            let (a_err, b_err) = generate_noise(spec, m, rep as u64)?;
            let mf = m as f64;
            let mut w = GammaSystem {
                g1: a0.tr_mul(&a_err),
                g2: a0.tr_mul(&b_err),
                g3: a_err.tr_mul(&a_err) - DMatrix::identity(n, n) * (mf * sigma2),
                g4: a_err.tr_mul(&b_err),
                g5: b_err.tr_mul(&b_err) - DMatrix::identity(d, d) * (mf * sigma2),
            };
            w.scale(1.0 / root_m);
            Ok(DVector::from_vec(w.flatten()))
        })
        .collect::<Result<_>>()?;

    let labels = GammaSystem::component_labels(n, d);
    let rows_of = [n, n, n, n, d];
    let (mu, cov) = mean_and_covariance(&samples);
    let sizes = [n * n, n * d, n * n, n * d, d * d];
    let starts: Vec<usize> = sizes.iter().scan(0, |acc, &s| { let start = *acc; *acc += s; Some(start) }).collect();
    let entries: Vec<CltEntry> = labels
        .iter()
        .enumerate()
        .map(|(k, &comp)| {
            let local = k - starts[comp];
            let sd = cov[(k, k)].sqrt();
            let se = sd / (reps as f64).sqrt();
            let column: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            CltEntry {
                component: comp + 1,
                row: local % rows_of[comp],
                col: local / rows_of[comp],
                mean: mu[k],
                sd,
                se,
                mean_within_4se: reps < 2 || mu[k].abs() <= 4.0 * se,
                ks: ks_normal_fit(&column),
            }
        })
        .collect();

    let sufficient_sample = entries.iter().all(|e| e.ks.is_some());
    let ks_pass_fraction = sufficient_sample.then(|| {
        entries.iter().filter(|e| e.ks.is_some_and(|r| r.passes(CLT_KS_ALPHA))).count() as f64
            / entries.len() as f64
    });
    let max_cross_correlation = (reps >= 3).then(|| {
        let corr = correlation_from_covariance(&cov);
        let mut worst = 0.0_f64;
        for i in 0..labels.len() {
            for j in 0..i {
                if labels[i] != labels[j] {
                    worst = worst.max(corr[(i, j)].abs());
                }
            }
        }
        worst
    });

    Ok(CltReport {
        schema_version: crate::SCHEMA_VERSION.into(),
        kind: "clt-report".into(),
        m,
        reps,
        noise: spec.noise.label(),
        base_seed: spec.base_seed,
        sufficient_sample,
        ks_alpha: CLT_KS_ALPHA,
        ks_pass_fraction,
        means_within_4se: entries.iter().all(|e| e.mean_within_4se),
        max_cross_correlation,
        cross_correlation_band: 4.0 / (reps as f64).sqrt(),
        entries,
    })
}
