//! The TLS objective, its matrix estimating function and derivative, and the
//! two solvers: the compound-matrix SVD construction and Newton refinement on
//! the estimating equation `Σ s(aᵢ, bᵢ; X) = 0`.
//!
//! All row sums go through [`tree_sum`], so results are reproducible
//! bit-for-bit for a fixed build.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{EivError, Result};
use crate::linalg::{gram_plus_identity, tree_sum, unvec_col, vec_col};
use crate::model::EivDataset;

/// `V₂₂` counts as singular when its smallest singular value is at or below this.
pub const V22_SINGULAR_TOL: f64 = 1e-12;
/// Relative gap `(σₙ − σₙ₊₁)/σ₁` at or below which the spectrum is flagged degenerate.
pub const SPECTRUM_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Svd,
    Newton,
    SvdNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// The `n`-th and `(n+1)`-th singular values of `[A, B]` nearly coincide.
    DegenerateSpectrum { relative_gap: f64 },
    /// `m = n + d`; asymptotic statements say nothing at this size.
    MinimalRows,
    NoConvergence { score_norm: f64, iterations: usize },
    /// The assembled Newton operator disagrees with finite differences.
    JacobianCheck { relative_error: f64 },
}

impl std::fmt::Display for FitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitWarning::DegenerateSpectrum { relative_gap } => write!(
                f,
                "degenerate spectrum: relative gap {relative_gap:.3e} between the n-th and (n+1)-th singular values; the solution is ill-determined"
            ),
            FitWarning::MinimalRows => write!(f, "m = n + d; the fit is exact-size and carries no asymptotic guarantees"),
            FitWarning::NoConvergence { score_norm, iterations } => write!(
                f,
                "Newton refinement stopped after {iterations} iterations with score norm {score_norm:.3e}"
            ),
            FitWarning::JacobianCheck { relative_error } => write!(
                f,
                "score Jacobian differs from finite differences by {relative_error:.3e} (relative)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlsFit {
    pub x_hat: DMatrix<f64>,
    pub q_value: f64,
    /// Frobenius norm of the total score at `x_hat`.
    pub score_norm: f64,
    pub method: SolveMethod,
    pub converged: bool,
    pub iterations: usize,
    /// Singular values of `[A, B]`, descending.
    pub singular_values: Vec<f64>,
    pub tol_score: f64,
    pub warnings: Vec<FitWarning>,
}

impl TlsFit {
    pub fn has_warning(&self, pred: impl Fn(&FitWarning) -> bool) -> bool {
        self.warnings.iter().any(pred)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol_score: f64,
    pub max_iter: usize,
    /// Compare the Newton operator against finite differences before iterating.
    pub fd_check: bool,
}

impl SolverConfig {
    /// `tol_score = 10⁻¹⁰ · m · max(1, scale²)` where `scale` is the largest
    /// absolute entry of `[A, B]`; the score is quadratic in the data.
    pub fn for_dataset(data: &EivDataset) -> Self {
        let s = data.scale().max(1.0);
        SolverConfig {
            tol_score: 1e-10 * data.dims().m as f64 * s * s,
            max_iter: 50,
            fd_check: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_score > 0.0) {
            return Err(EivError::DomainError("tol_score must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(EivError::DomainError("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-`X` precomputation shared by every row evaluation.
struct Kernel<'a> {
    x: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> Kernel<'a> {
    fn new(x: &'a DMatrix<f64>) -> Self {
        Kernel { x, chol: gram_plus_identity(x) }
    }

    /// `r = Xᵀa − b`.
    fn residual(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        self.x.tr_mul(a) - b
    }

    fn loss(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let r = self.residual(a, b);
        r.dot(&self.chol.solve(&r))
    }

    /// `s = a rᵀ − X M r rᵀ = (a − X M r) rᵀ` with `M = (I + XᵀX)⁻¹`.
    fn score(&self, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let r = self.residual(a, b);
        let mr = self.chol.solve(&r);
        (a - self.x * mr) * r.transpose()
    }

    fn jacobian(&self, a: &DVector<f64>, b: &DVector<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.x;
        let r = self.residual(a, b);
        let mr = self.chol.solve(&r);
        let at_h = h.tr_mul(a).transpose(); // aᵀH, 1×d
        let sym = h.tr_mul(x) + x.tr_mul(h); // HᵀX + XᵀH
        let mut out = a * &at_h;
        out -= h * &mr * r.transpose();
        out += x * self.chol.solve(&(&sym * &mr)) * r.transpose();
        let inner = h.tr_mul(a) * r.transpose() + &r * &at_h;
        out -= x * self.chol.solve(&inner);
        out
    }
}

fn check_row_shapes(a: &DVector<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != a.len() || x.ncols() != b.len() {
        return Err(EivError::dims(format!(
            "a has length {}, b has length {}, but X is {}x{}",
            a.len(),
            b.len(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

fn check_x(data: &EivDataset, x: &DMatrix<f64>) -> Result<()> {
    let dims = data.dims();
    if x.shape() != (dims.n, dims.d) {
        return Err(EivError::dims(format!(
            "X is {}x{} but the dataset needs {}x{}",
            x.nrows(),
            x.ncols(),
            dims.n,
            dims.d
        )));
    }
    Ok(())
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// `q(a, b; X) = (aᵀX − bᵀ)(I_d + XᵀX)⁻¹(Xᵀa − b)`.
pub fn loss_q(a: &DVector<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    check_row_shapes(a, b, x)?;
    Ok(Kernel::new(x).loss(a, b))
}

/// `Q(X) = Σᵢ q(aᵢ, bᵢ; X)`.
pub fn objective_q(data: &EivDataset, x: &DMatrix<f64>) -> Result<f64> {
    check_x(data, x)?;
    let k = Kernel::new(x);
    Ok(tree_sum(data.dims().m, &0.0, |i, acc| {
        *acc += k.loss(&row(data.a(), i), &row(data.b(), i))
    }))
}

/// The estimating function `s(a, b; X) = a(aᵀX − bᵀ) − X(I_d + XᵀX)⁻¹(Xᵀa − b)(aᵀX − bᵀ)`.
pub fn score_s(a: &DVector<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_row_shapes(a, b, x)?;
    Ok(Kernel::new(x).score(a, b))
}

/// Left side of the estimating equation, `Σᵢ s(aᵢ, bᵢ; X)`.
pub fn total_score(data: &EivDataset, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_x(data, x)?;
    let k = Kernel::new(x);
    let zero = DMatrix::zeros(x.nrows(), x.ncols());
    Ok(tree_sum(data.dims().m, &zero, |i, acc| {
        *acc += k.score(&row(data.a(), i), &row(data.b(), i))
    }))
}

/// Per-row scores `s(aᵢ, bᵢ; X)`, in row order.
pub fn row_scores(data: &EivDataset, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    check_x(data, x)?;
    let k = Kernel::new(x);
    Ok((0..data.dims().m)
        .map(|i| k.score(&row(data.a(), i), &row(data.b(), i)))
        .collect())
}

/// Directional derivative `s′_X · H` of the estimating function.
pub fn score_jacobian(
    a: &DVector<f64>,
    b: &DVector<f64>,
    x: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_row_shapes(a, b, x)?;
    if h.shape() != x.shape() {
        return Err(EivError::dims("direction H must have the shape of X"));
    }
    Ok(Kernel::new(x).jacobian(a, b, h))
}

/// The `(n·d)×(n·d)` matrix of `H ↦ Σᵢ s′_X(aᵢ, bᵢ; X)·H` acting on
/// column-stacked `vec(H)`.
pub fn score_operator(data: &EivDataset, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_x(data, x)?;
    let (n, d) = x.shape();
    let k = Kernel::new(x);
    let mut op = DMatrix::zeros(n * d, n * d);
    let zero = DMatrix::zeros(n, d);
    for col in 0..n * d {
        let mut basis = DMatrix::zeros(n, d);
        basis[(col % n, col / n)] = 1.0;
        let image = tree_sum(data.dims().m, &zero, |i, acc| {
            *acc += k.jacobian(&row(data.a(), i), &row(data.b(), i), &basis)
        });
        op.set_column(col, &vec_col(&image));
    }
    Ok(op)
}

/// Central-difference relative error of [`score_operator`] against `total_score`.
pub fn score_operator_fd_error(data: &EivDataset, x: &DMatrix<f64>) -> Result<f64> {
    let op = score_operator(data, x)?;
    let (n, d) = x.shape();
    let h = 1e-6 * (1.0 + x.norm());
    let mut fd = DMatrix::zeros(n * d, n * d);
    for col in 0..n * d {
        let mut e = DMatrix::zeros(n, d);
        e[(col % n, col / n)] = h;
        let diff = (total_score(data, &(x + &e))? - total_score(data, &(x - &e))?) / (2.0 * h);
        fd.set_column(col, &vec_col(&diff));
    }
    Ok((&op - &fd).norm() / op.norm().max(f64::MIN_POSITIVE))
}

/// One Newton increment `Δ` solving `J vec(Δ) = −vec(Σ s)` at `x`.
pub fn newton_step(data: &EivDataset, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let op = score_operator(data, x)?;
    let rhs = -vec_col(&total_score(data, x)?);
    let delta = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EivError::DomainError("singular score Jacobian".into()))?;
    Ok(unvec_col(&delta, x.nrows(), x.ncols()))
}

/// Closed-form TLS via the SVD of `[A, B]`: `X̂ = −V₁₂V₂₂⁻¹`.
pub fn tls_solve_svd(data: &EivDataset) -> Result<TlsFit> {
    let dims = data.dims();
    let (n, d) = (dims.n, dims.d);
    let p = n + d;
    let svd = data.compound().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    // Right singular vectors of the d smallest singular values.
    let mut v_small = DMatrix::zeros(p, d);
    for (k, &idx) in order[n..].iter().enumerate() {
        v_small.set_column(k, &v_t.row(idx).transpose());
    }
    let v12 = v_small.rows(0, n).into_owned();
    let v22 = v_small.rows(n, d).into_owned();

    let v22_svd = v22.clone().svd(true, true);
    let v22_min = v22_svd.singular_values.min();
    if v22_min <= V22_SINGULAR_TOL {
        return Err(EivError::NoSolution { ratio: v22_min });
    }
    // X̂ = −V₁₂V₂₂⁻¹, i.e. X̂ᵀ solves V₂₂ᵀ X̂ᵀ = −V₁₂ᵀ.
    let x_hat = v22
        .transpose()
        .lu()
        .solve(&(-v12.transpose()))
        .ok_or(EivError::NoSolution { ratio: v22_min })?
        .transpose();

    let mut warnings = Vec::new();
    let gap = if sv[0] > 0.0 { (sv[n - 1] - sv[n]) / sv[0] } else { 0.0 };
    if gap <= SPECTRUM_GAP_TOL {
        warnings.push(FitWarning::DegenerateSpectrum { relative_gap: gap });
    }
    if dims.is_minimal() {
        warnings.push(FitWarning::MinimalRows);
    }

    let cfg = SolverConfig::for_dataset(data);
    let score_norm = total_score(data, &x_hat)?.norm();
    let q_value = objective_q(data, &x_hat)?.max(0.0);
    Ok(TlsFit {
        x_hat,
        q_value,
        score_norm,
        method: SolveMethod::Svd,
        converged: score_norm <= cfg.tol_score,
        iterations: 0,
        singular_values: sv,
        tol_score: cfg.tol_score,
        warnings,
    })
}

/// SVD solution followed by Newton iterations on the estimating equation
/// until `‖Σ s‖_F ≤ tol_score`.
pub fn tls_solve(data: &EivDataset, cfg: &SolverConfig) -> Result<TlsFit> {
    cfg.validate()?;
    let mut fit = tls_solve_svd(data)?;
    fit.method = SolveMethod::SvdNewton;
    fit.tol_score = cfg.tol_score;

    if cfg.fd_check {
        let err = score_operator_fd_error(data, &fit.x_hat)?;
        if err > 1e-5 {
            fit.warnings.push(FitWarning::JacobianCheck { relative_error: err });
        }
    }

    let mut x = fit.x_hat.clone();
    let mut norm = fit.score_norm;
    let mut iterations = 0;
    while norm > cfg.tol_score && iterations < cfg.max_iter {
        iterations += 1;
        let Ok(step) = newton_step(data, &x) else { break };
        // Backtrack on the score norm.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let cand = &x + &step * t;
            let cand_norm = total_score(data, &cand)?.norm();
            if cand_norm < norm {
                accepted = Some((cand, cand_norm));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_norm)) => {
                x = cand;
                norm = cand_norm;
            }
            None => break,
        }
    }

    fit.converged = norm <= cfg.tol_score;
    fit.iterations = iterations;
    if iterations > 0 {
        fit.q_value = objective_q(data, &x)?.max(0.0);
        fit.x_hat = x;
        fit.score_norm = norm;
    }
    if !fit.converged {
        fit.warnings.push(FitWarning::NoConvergence { score_norm: norm, iterations });
    }
    Ok(fit)
}
