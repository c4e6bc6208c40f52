//! Thin helpers over `faer` for the dense Hermitian algebra used throughout.

use faer::linalg::solvers::Solve;
use faer::prelude::*;
use faer::{c64, Side};

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;
pub type CVec = Col<c64>;

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: MatRef<'_, c64>) -> Option<(Vec<f64>, CMat)> {
    let evd = a.self_adjoint_eigen(Side::Lower).ok()?;
    let s = evd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Some((vals, evd.U().to_owned()))
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(a: MatRef<'_, c64>) -> Option<Vec<f64>> {
    let vals = a.self_adjoint_eigenvalues(Side::Lower).ok()?;
    Some(vals)
}

/// Solve the Hermitian-definite pencil `a x = theta b x` through a Cholesky
/// reduction of `b`. Returned vectors are `b`-orthonormal.
pub fn generalized_hermitian_eigen(
    a: MatRef<'_, c64>,
    b: MatRef<'_, c64>,
) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    let llt = b
        .llt(Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite("pencil metric"))?;
    let l = llt.L();
    // c = L^{-1} a L^{-H}
    let mut tmp = a.to_owned();
    l.solve_lower_triangular_in_place(tmp.as_mut());
    let mut c = tmp.adjoint().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    let c = symmetrized(c.as_ref());
    let (vals, y) = hermitian_eigen(c.as_ref()).ok_or(Error::EigensolverFailure {
        kx: f64::NAN,
        ky: f64::NAN,
    })?;
    let mut x = y;
    l.adjoint().solve_upper_triangular_in_place(x.as_mut());
    debug_assert_eq!(x.nrows(), n);
    Ok((vals, x))
}

/// `(a + a^H) / 2`.
pub fn symmetrized(a: MatRef<'_, c64>) -> CMat {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// `max |a - a^H|` entrywise.
pub fn hermitian_residual(a: MatRef<'_, c64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(a: MatRef<'_, c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max(a[(i, j)].norm());
        }
    }
    worst
}

/// `u^H v`.
pub fn dot(u: ColRef<'_, c64>, v: ColRef<'_, c64>) -> c64 {
    (0..u.nrows()).fold(c64::new(0.0, 0.0), |acc, i| acc + u[i].conj() * v[i])
}

pub fn norm(u: ColRef<'_, c64>) -> f64 {
    u.norm_l2()
}

/// Cholesky factorization of a Hermitian positive-definite matrix.
pub struct HermitianSolver {
    llt: faer::linalg::solvers::Llt<c64>,
    dim: usize,
}

impl HermitianSolver {
    pub fn new(a: MatRef<'_, c64>, label: &'static str) -> Result<Self> {
        let llt = a
            .llt(Side::Lower)
            .map_err(|_| Error::NotPositiveDefinite(label))?;
        Ok(Self {
            llt,
            dim: a.nrows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_mat(&self, rhs: MatRef<'_, c64>) -> CMat {
        self.llt.solve(rhs)
    }

    pub fn solve(&self, rhs: ColRef<'_, c64>) -> CVec {
        let mut out = rhs.to_owned();
        self.llt.solve_in_place(out.as_mat_mut());
        out
    }
}

/// Column `j` of `m` as an owned vector.
pub fn column(m: MatRef<'_, c64>, j: usize) -> CVec {
    m.col(j).to_owned()
}

/// Stack vectors as the columns of a matrix.
pub fn from_columns(rows: usize, cols: &[CVec]) -> CMat {
    Mat::from_fn(rows, cols.len(), |i, j| cols[j][i])
}
