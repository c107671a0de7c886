use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::design::generate_design;
use super::noise::generate_noise;
use super::spec::SimStudySpec;
use crate::error::{EivError, Result};
use crate::inference::{
    confidence_ellipsoid, covariance_su_analytic, covariance_su_sandwich, estimate_nuisance,
    vec_covariance_analytic,
};
use crate::linalg::{frobenius, to_rows, vec_col};
use crate::model::{make_true_model, TrueModel};
use crate::stats::{ks_standard_normal, mean, mean_and_covariance, median, quantile, KsResult};
use crate::tls::{tls_solve, SolverConfig};

/// Everything fixed at one `m`: the frozen design and the analytic truth.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub m: usize,
    pub model: TrueModel,
    /// `(1/m)A₀ᵀA₀` of the realized design.
    pub va_m: DMatrix<f64>,
    /// Analytic covariance of column-stacked `√m·vec(X̂ − X₀)` at `(X₀, V_A(m), σ²)`.
    pub analytic_vec_cov: DMatrix<f64>,
    pub directions: Vec<DVector<f64>>,
    /// Analytic `S_u` at the truth, one per direction.
    pub analytic_su: Vec<DMatrix<f64>>,
}

impl StudyContext {
    pub fn new(spec: &SimStudySpec, m: usize) -> Result<Self> {
        let a0 = generate_design(spec, m)?;
        let model = make_true_model(a0, spec.x0_matrix(), spec.sigma2())?;
        let va_m = model.design_moment();
        let x0 = model.x0();
        let analytic_vec_cov = vec_covariance_analytic(x0, &va_m, spec.sigma2())?;
        let directions = spec.direction_vectors();
        let analytic_su = directions
            .iter()
            .map(|u| covariance_su_analytic(x0, &va_m, spec.sigma2(), u).map(|c| c.s_u))
            .collect::<Result<_>>()?;
        Ok(StudyContext { m, model, va_m, analytic_vec_cov, directions, analytic_su })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepFailure {
    NoSolution,
    NoConvergence { score_norm: f64 },
    Inference { reason: String },
}

/// What one replication saw for one direction `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionOutcome {
    pub analytic_covered: Vec<bool>,
    pub sandwich_covered: Vec<bool>,
    /// `(Ŝ_u/m)^{-1/2}(X̂ − X₀)u` with the sandwich and plug-in analytic shapes.
    pub studentized_sandwich: DVector<f64>,
    pub studentized_analytic: DVector<f64>,
    pub sandwich_su: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub x_hat: DMatrix<f64>,
    pub error_frobenius: f64,
    pub sigma2_hat: f64,
    pub va_hat: DMatrix<f64>,
    pub iterations: usize,
    pub directions: Vec<DirectionOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep_index: u64,
    pub outcome: std::result::Result<RepOutcome, RepFailure>,
}

/// Simulates replication `rep_index` at the context's `m`: errors, fit,
/// nuisances and one ellipsoid per direction and level.
pub fn run_replication(spec: &SimStudySpec, ctx: &StudyContext, rep_index: u64) -> Result<ReplicationRecord> {
    let (a_err, b_err) = generate_noise(spec, ctx.m, rep_index)?;
    let data = ctx.model.observe(&a_err, &b_err)?;
    let outcome = (|| {
        let fit = match tls_solve(&data, &SolverConfig::for_dataset(&data)) {
            Ok(fit) => fit,
            Err(EivError::NoSolution { .. }) => return Err(RepFailure::NoSolution),
            Err(e) => return Err(RepFailure::Inference { reason: e.to_string() }),
        };
        if !fit.converged {
            return Err(RepFailure::NoConvergence { score_norm: fit.score_norm });
        }
        let inference = |e: EivError| RepFailure::Inference { reason: e.to_string() };
        let nuis = estimate_nuisance(&data, &fit.x_hat).map_err(inference)?;
        let x0 = ctx.model.x0();
        let mut directions = Vec::with_capacity(ctx.directions.len());
        for u in &ctx.directions {
            let truth = x0 * u;
            let sandwich = covariance_su_sandwich(&data, &fit, &nuis.va_hat, u).map_err(inference)?;
            let analytic = covariance_su_analytic(&fit.x_hat, &nuis.va_hat, nuis.sigma2_hat.max(f64::MIN_POSITIVE), u)
                .map_err(inference)?;
            let mut entry = DirectionOutcome {
                analytic_covered: Vec::with_capacity(spec.levels.len()),
                sandwich_covered: Vec::with_capacity(spec.levels.len()),
                studentized_sandwich: DVector::zeros(0),
                studentized_analytic: DVector::zeros(0),
                sandwich_su: sandwich.s_u.clone(),
            };
            for &level in &spec.levels {
                let es = confidence_ellipsoid(&fit, &sandwich, ctx.m, level).map_err(inference)?;
                let ea = confidence_ellipsoid(&fit, &analytic, ctx.m, level).map_err(inference)?;
                entry.sandwich_covered.push(es.contains(&truth));
                entry.analytic_covered.push(ea.contains(&truth));
                if entry.studentized_sandwich.is_empty() {
                    entry.studentized_sandwich = -es.whiten(&truth);
                    entry.studentized_analytic = -ea.whiten(&truth);
                }
            }
            directions.push(entry);
        }
        Ok(RepOutcome {
            error_frobenius: frobenius(&(&fit.x_hat - x0)),
            x_hat: fit.x_hat,
            sigma2_hat: nuis.sigma2_hat,
            va_hat: nuis.va_hat,
            iterations: fit.iterations,
            directions,
        })
    })();
    Ok(ReplicationRecord { rep_index, outcome })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub hits: usize,
    pub trials: usize,
    pub rate: f64,
    /// Binomial standard error `√(rate(1 − rate)/trials)`.
    pub se: f64,
}

impl Coverage {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Self {
        let (mut hits, mut trials) = (0, 0);
        for f in flags {
            trials += 1;
            hits += f as usize;
        }
        let rate = if trials > 0 { hits as f64 / trials as f64 } else { 0.0 };
        let se = if trials > 0 { (rate * (1.0 - rate) / trials as f64).sqrt() } else { 0.0 };
        Coverage { hits, trials, rate, se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelCoverage {
    pub level: f64,
    pub analytic: Coverage,
    pub sandwich: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub median: f64,
    pub mean: f64,
    pub q90: f64,
    pub max: f64,
}

impl ErrorSummary {
    fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| ErrorSummary {
            median: median(xs),
            mean: mean(xs),
            q90: quantile(xs, 0.9),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    pub u: Vec<f64>,
    pub analytic_su_truth: Vec<Vec<f64>>,
    pub sandwich_su_mean: Vec<Vec<f64>>,
    /// `‖mean Ŝ_u(sandwich) − S_u‖_F / ‖S_u‖_F`.
    pub sandwich_rel_gap: f64,
    pub coverage: Vec<LevelCoverage>,
    /// Per-coordinate KS of studentized `(X̂ − X₀)u` against `N(0, 1)`.
    pub ks_sandwich: Vec<Option<KsResult>>,
    pub ks_analytic: Vec<Option<KsResult>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailureCounts {
    pub no_solution: usize,
    pub no_convergence: usize,
    pub inference: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MReport {
    pub m: usize,
    pub base_seed: u64,
    pub reps: usize,
    pub successes: usize,
    pub failures: FailureCounts,
    /// Indices of the failed replications, so each one can be rerun alone.
    pub failed_reps: Vec<u64>,
    pub error_frobenius: Option<ErrorSummary>,
    pub bias: Vec<Vec<f64>>,
    /// `m · cov(vec(X̂ − X₀))`, column-stacked.
    pub scaled_covariance: Vec<Vec<f64>>,
    pub analytic_covariance: Vec<Vec<f64>>,
    pub covariance_rel_gap: f64,
    pub directions: Vec<DirectionReport>,
    pub sigma2_rel_error: Option<ErrorSummary>,
    /// Relative Frobenius error of `V̂_A` against `(1/m)A₀ᵀA₀`.
    pub va_rel_error: Option<ErrorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStudyReport {
    pub schema_version: String,
    pub kind: String,
    pub spec: SimStudySpec,
    pub per_m: Vec<MReport>,
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

fn aggregate(spec: &SimStudySpec, ctx: &StudyContext, records: &[ReplicationRecord]) -> Result<MReport> {
    let (n, d) = (spec.n, spec.d);
    let mut failures = FailureCounts { no_solution: 0, no_convergence: 0, inference: 0, total: 0 };
    let mut failed_reps = Vec::new();
    let mut ok = Vec::new();
    for r in records {
        match &r.outcome {
            Ok(o) => ok.push(o),
            Err(f) => {
                failed_reps.push(r.rep_index);
                failures.total += 1;
                match f {
                    RepFailure::NoSolution => failures.no_solution += 1,
                    RepFailure::NoConvergence { .. } => failures.no_convergence += 1,
                    RepFailure::Inference { .. } => failures.inference += 1,
                }
            }
        }
    }
    if ok.is_empty() {
        return Err(EivError::StudyInvalid { m: ctx.m });
    }
    let x0 = ctx.model.x0();
    let k = ok.len() as f64;
    let mf = ctx.m as f64;

    let errs: Vec<f64> = ok.iter().map(|o| o.error_frobenius).collect();
    let bias = ok.iter().fold(DMatrix::zeros(n, d), |acc, o| acc + (&o.x_hat - x0)) / k;
    let devs: Vec<DVector<f64>> = ok.iter().map(|o| vec_col(&(&o.x_hat - x0))).collect();
    let (_, cov) = mean_and_covariance(&devs);
    let scaled = cov * mf;

    let directions = ctx
        .directions
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let sandwich_mean = ok.iter().fold(DMatrix::zeros(n, n), |acc, o| acc + &o.directions[j].sandwich_su) / k;
            let coverage = spec
                .levels
                .iter()
                .enumerate()
                .map(|(l, &level)| LevelCoverage {
                    level,
                    analytic: Coverage::from_flags(ok.iter().map(|o| o.directions[j].analytic_covered[l])),
                    sandwich: Coverage::from_flags(ok.iter().map(|o| o.directions[j].sandwich_covered[l])),
                })
                .collect();
            let ks = |pick: fn(&DirectionOutcome) -> &DVector<f64>| -> Vec<Option<KsResult>> {
                (0..n)
                    .map(|c| {
                        let col: Vec<f64> = ok.iter().map(|o| pick(&o.directions[j])[c]).collect();
                        ks_standard_normal(&col)
                    })
                    .collect()
            };
            DirectionReport {
                u: u.iter().copied().collect(),
                analytic_su_truth: to_rows(&ctx.analytic_su[j]),
                sandwich_su_mean: to_rows(&sandwich_mean),
                sandwich_rel_gap: rel_gap(&sandwich_mean, &ctx.analytic_su[j]),
                coverage,
                ks_sandwich: ks(|o| &o.studentized_sandwich),
                ks_analytic: ks(|o| &o.studentized_analytic),
            }
        })
        .collect();

    let s2 = spec.sigma2();
    let s2_err: Vec<f64> = ok.iter().map(|o| (o.sigma2_hat - s2).abs() / s2).collect();
    let va_err: Vec<f64> = ok.iter().map(|o| rel_gap(&o.va_hat, &ctx.va_m)).collect();

    Ok(MReport {
        m: ctx.m,
        base_seed: spec.base_seed,
        reps: records.len(),
        successes: ok.len(),
        failures,
        failed_reps,
        error_frobenius: ErrorSummary::of(&errs),
        bias: to_rows(&bias),
        scaled_covariance: to_rows(&scaled),
        analytic_covariance: to_rows(&ctx.analytic_vec_cov),
        covariance_rel_gap: rel_gap(&scaled, &ctx.analytic_vec_cov),
        directions,
        sigma2_rel_error: ErrorSummary::of(&s2_err),
        va_rel_error: ErrorSummary::of(&va_err),
    })
}

/// Runs every replication at every `m` of the schedule.
///
/// Replications run in parallel; records are collected in replication order
/// before any aggregation, so the report does not depend on thread count.
pub fn run_study(spec: &SimStudySpec) -> Result<SimStudyReport> {
    spec.validate()?;
    let per_m = spec
        .m_schedule
        .iter()
        .map(|&m| {
            let ctx = StudyContext::new(spec, m)?;
            let records: Vec<ReplicationRecord> = (0..spec.reps as u64)
                .into_par_iter()
                .map(|rep| run_replication(spec, &ctx, rep))
                .collect::<Result<_>>()?;
            aggregate(spec, &ctx, &records)
        })
        .collect::<Result<_>>()?;
    Ok(SimStudyReport {
        schema_version: crate::SCHEMA_VERSION.into(),
        kind: "sim-study-report".into(),
        spec: spec.clone(),
        per_m,
    })
}
