use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eiv_tls::inference::{
    confidence_ellipsoid, covariance_su_analytic, covariance_su_sandwich, estimate_nuisance,
    NuisanceEstimates,
};
use eiv_tls::io::{parse_csv, parse_direction};
use eiv_tls::linalg::row_major;
use eiv_tls::montecarlo::{clt_check_w, run_study, SimStudyReport, SimStudySpec};
use eiv_tls::{tls_solve, validate_dataset, EivDataset, EivError, SolverConfig, TlsFit, SCHEMA_VERSION};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

const ANALYTIC_DISCLAIMER: &str = "analytic S_u assumes normally distributed errors";

#[derive(Parser)]
#[command(name = "eiv-tls", version, about = "Total least squares for AX ~ B with errors in A and B")]
struct Cli {
    /// Print progress diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// CSV with the m×n observed inputs A.
    a_csv: PathBuf,
    /// CSV with the m×d observed outputs B.
    b_csv: PathBuf,
    /// Skip one header line in both files.
    #[arg(long)]
    header: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Analytic,
    Sandwich,
}

#[derive(Subcommand)]
enum Command {
    /// Fit X̂ and the nuisance estimates.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Output JSON path (stdout when absent).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Confidence ellipsoid for X₀u.
    Ci {
        #[command(flatten)]
        data: DataArgs,
        /// Direction u as comma-separated reals, length d.
        #[arg(long, allow_hyphen_values = true)]
        u: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Method::Sandwich)]
        method: Method,
        /// Required with `--method analytic`.
        #[arg(long)]
        assume_normal: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study.
    Simulate {
        /// Study spec JSON; the bundled default study when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's base_seed.
        #[arg(long, env = "EIV_TLS_SEED")]
        seed: Option<u64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write one CSV summary row per m.
        #[arg(long)]
        csv_summary: Option<PathBuf>,
    },
    /// Check the normal approximation of the normalized W-sums.
    CltCheck {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, env = "EIV_TLS_SEED")]
        seed: Option<u64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<EivError> for Failure {
    fn from(e: EivError) -> Self {
        let code = match e {
            EivError::NoSolution { .. }
            | EivError::SingularShape
            | EivError::SingularVA
            | EivError::NegativeVariance { .. }
            | EivError::StudyInvalid { .. } => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn user_error(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| user_error(format!("cannot read {}: {e}", path.display())))
}

fn read_matrix(path: &Path, header: bool) -> CliResult<DMatrix<f64>> {
    parse_csv(&read_text(path)?, header).map_err(|e| user_error(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> CliResult<EivDataset> {
    let a = read_matrix(&args.a_csv, args.header)?;
    let b = read_matrix(&args.b_csv, args.header)?;
    if a.nrows() != b.nrows() {
        return Err(user_error(format!(
            "row count mismatch: {} has {} rows but {} has {} rows",
            args.a_csv.display(),
            a.nrows(),
            args.b_csv.display(),
            b.nrows()
        )));
    }
    Ok(validate_dataset(a, b)?)
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_out(out, &text)
}

fn write_out(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| user_error(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!({ "shape": [m.nrows(), m.ncols()], "data": row_major(m) })
}

fn warnings_json(fit: &TlsFit, nuis: &NuisanceEstimates) -> Vec<Value> {
    let mut out: Vec<Value> = fit
        .warnings
        .iter()
        .map(|w| {
            let mut v = serde_json::to_value(w).expect("warnings serialize");
            v["message"] = Value::String(w.to_string());
            v
        })
        .collect();
    if !nuis.va_hat_pd {
        out.push(json!({
            "kind": "va_not_positive_definite",
            "message": "V_A estimate is not positive definite beyond sampling noise; inference is unreliable",
        }));
    }
    if nuis.sigma2_clamped {
        out.push(json!({ "kind": "sigma2_clamped", "message": "negative sigma2 estimate within round-off set to zero" }));
    }
    out
}

fn fit_all(data: &EivDataset, verbose: u8) -> CliResult<(TlsFit, NuisanceEstimates)> {
    let fit = tls_solve(data, &SolverConfig::for_dataset(data))?;
    if verbose > 0 {
        eprintln!("fit: {} Newton iterations, score norm {:.3e}", fit.iterations, fit.score_norm);
    }
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let nuis = estimate_nuisance(data, &fit.x_hat)?;
    Ok((fit, nuis))
}

fn cmd_fit(data: DataArgs, out: Option<PathBuf>, verbose: u8) -> CliResult<()> {
    let ds = load_data(&data)?;
    let (fit, nuis) = fit_all(&ds, verbose)?;
    let dims = ds.dims();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "m": dims.m,
        "n": dims.n,
        "d": dims.d,
        "x_hat": matrix_json(&fit.x_hat),
        "q_value": fit.q_value,
        "score_norm": fit.score_norm,
        "tol_score": fit.tol_score,
        "sigma2_hat": nuis.sigma2_hat,
        "va_hat": matrix_json(&nuis.va_hat),
        "va_hat_pd": nuis.va_hat_pd,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "singular_values": fit.singular_values,
        "warnings": warnings_json(&fit, &nuis),
    });
    emit(out.as_deref(), &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ci(
    data: DataArgs,
    u: &str,
    level: f64,
    method: Method,
    assume_normal: bool,
    out: Option<PathBuf>,
    verbose: u8,
) -> CliResult<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(user_error(format!("--level must lie in (0, 1), got {level}")));
    }
    if method == Method::Analytic && !assume_normal {
        return Err(user_error(format!("--method analytic requires --assume-normal ({ANALYTIC_DISCLAIMER})")));
    }
    let u = parse_direction(u).map_err(|e| user_error(format!("--u: {e}")))?;
    let ds = load_data(&data)?;
    let dims = ds.dims();
    if u.len() != dims.d {
        return Err(user_error(format!("--u has {} entries but B has d = {} columns", u.len(), dims.d)));
    }
    if u.iter().all(|&v| v == 0.0) {
        return Err(EivError::ZeroDirection.into());
    }
    let (fit, nuis) = fit_all(&ds, verbose)?;
    let cov = match method {
        Method::Sandwich => covariance_su_sandwich(&ds, &fit, &nuis.va_hat, &u)?,
        Method::Analytic => covariance_su_analytic(&fit.x_hat, &nuis.va_hat, nuis.sigma2_hat, &u)?,
    };
    let e = confidence_ellipsoid(&fit, &cov, dims.m, level)?;
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "ci",
        "u": u.as_slice(),
        "center": e.center.as_slice(),
        "shape": matrix_json(&e.shape),
        "radius2": e.radius2,
        "level": level,
        "method": match method { Method::Analytic => "analytic", Method::Sandwich => "sandwich" },
        "m": dims.m,
        "df": dims.n,
        "warnings": warnings_json(&fit, &nuis),
    });
    if let Some((lo, hi)) = e.interval() {
        report["lo"] = json!(lo);
        report["hi"] = json!(hi);
    }
    if method == Method::Analytic {
        report["disclaimer"] = json!(ANALYTIC_DISCLAIMER);
    }
    emit(out.as_deref(), &report)
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> CliResult<SimStudySpec> {
    let mut spec = match path {
        Some(p) => SimStudySpec::from_json(&read_text(p)?).map_err(|e| user_error(format!("{}: {e}", p.display())))?,
        None => SimStudySpec::default_study(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    Ok(spec)
}

fn csv_summary(report: &SimStudyReport) -> String {
    let levels = &report.spec.levels;
    let mut out = String::from("m,reps,successes,failures,median_error");
    for l in levels {
        write!(out, ",coverage_analytic_{l},coverage_sandwich_{l}").unwrap();
    }
    out.push('\n');
    for r in &report.per_m {
        let med = r.error_frobenius.as_ref().map_or(f64::NAN, |e| e.median);
        write!(out, "{},{},{},{},{med:.16e}", r.m, r.reps, r.successes, r.failures.total).unwrap();
        for k in 0..levels.len() {
            let avg = |f: &dyn Fn(&eiv_tls::montecarlo::LevelCoverage) -> f64| {
                r.directions.iter().map(|d| f(&d.coverage[k])).sum::<f64>() / r.directions.len() as f64
            };
            write!(out, ",{:.16e},{:.16e}", avg(&|c| c.analytic.rate), avg(&|c| c.sandwich.rate)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn cmd_simulate(
    spec: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
    verbose: u8,
) -> CliResult<()> {
    let spec = load_spec(spec.as_deref(), seed)?;
    if verbose > 0 {
        eprintln!("simulate: reps {} over m = {:?}, base seed {}", spec.reps, spec.m_schedule, spec.base_seed);
    }
    let report = run_study(&spec)?;
    for r in &report.per_m {
        if r.failures.total > 0 {
            eprintln!("warning: m = {}: {} of {} replications failed", r.m, r.failures.total, r.reps);
        }
    }
    emit(out.as_deref(), &report)?;
    if let Some(p) = csv {
        write_out(Some(&p), &csv_summary(&report))?;
    }
    Ok(())
}

fn cmd_clt_check(
    spec: Option<PathBuf>,
    m: usize,
    reps: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let spec = load_spec(spec.as_deref(), seed)?;
    if m < spec.n + spec.d {
        return Err(user_error(format!("--m must be at least n + d = {}", spec.n + spec.d)));
    }
    if reps == 0 {
        return Err(user_error("--reps must be at least 1"));
    }
    let report = clt_check_w(&spec, m, reps)?;
    if !report.sufficient_sample {
        eprintln!("note: {reps} replications are too few for KS statistics; those fields are null");
    }
    emit(out.as_deref(), &report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let v = cli.verbose;
    let result = match cli.command {
        Command::Fit { data, out } => cmd_fit(data, out, v),
        Command::Ci { data, u, level, method, assume_normal, out } => {
            cmd_ci(data, &u, level, method, assume_normal, out, v)
        }
        Command::Simulate { spec, seed, out, csv_summary } => cmd_simulate(spec, seed, out, csv_summary, v),
        Command::CltCheck { spec, m, reps, seed, out } => cmd_clt_check(spec, m, reps, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
