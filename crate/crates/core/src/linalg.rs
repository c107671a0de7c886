//! Small dense helpers shared by the solver and the inference code.

use std::ops::AddAssign;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Rows per leaf of the deterministic reduction tree.
pub const REDUCE_CHUNK: usize = 256;

/// Sums `f(i)` over `0..len` with a fixed-chunk pairwise tree, so the result
/// depends only on `len` and never on scheduling.
pub fn tree_sum<T, F>(len: usize, zero: &T, f: F) -> T
where
    T: Clone + AddAssign,
    F: Fn(usize, &mut T),
{
    if len == 0 {
        return zero.clone();
    }
    let mut partials: Vec<T> = (0..len.div_ceil(REDUCE_CHUNK))
        .map(|c| {
            let mut acc = zero.clone();
            let end = ((c + 1) * REDUCE_CHUNK).min(len);
            for i in c * REDUCE_CHUNK..end {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    while partials.len() > 1 {
        let mut next = Vec::with_capacity(partials.len().div_ceil(2));
        let mut it = partials.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                left += right;
            }
            next.push(left);
        }
        partials = next;
    }
    partials.pop().unwrap()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of the SPD matrix `I_d + XᵀX`.
pub fn gram_plus_identity(x: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
    let d = x.ncols();
    let g = DMatrix::identity(d, d) + x.transpose() * x;
    // I + XᵀX is SPD for every finite X.
    Cholesky::new(g).expect("I + X^T X is positive definite")
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && Cholesky::new(symmetrize(m)).is_some()
}

/// Column-stacked vectorization.
pub fn vec_col(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec_col(v: &DVector<f64>, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(nrows, ncols, v.as_slice())
}

/// Row-major flattening, the layout used in the JSON outputs.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
