//! Small dense helpers shared by the solvers and gradient code.

use nalgebra::{DMatrix, DVector, Dyn, Matrix, Storage, U1};

use crate::error::{Error, Result};

/// Accumulates `scale * x x^T` into `gram`.
pub(crate) fn add_outer<S>(gram: &mut DMatrix<f64>, x: &Matrix<f64, Dyn, U1, S>, scale: f64)
where
    S: Storage<f64, Dyn, U1>,
{
    gram.ger(scale, x, x, 1.0);
}

/// `ridge * I` of size `k`.
pub(crate) fn ridge(k: usize, ridge: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal_element(k, k, ridge)
}

/// Cholesky factor of a symmetric positive definite system.
pub(crate) fn cholesky(
    gram: DMatrix<f64>,
    what: &'static str,
) -> Result<nalgebra::Cholesky<f64, Dyn>> {
    gram.cholesky().ok_or(Error::SingularSystem(what))
}

/// Solves `gram x = rhs` for symmetric positive definite `gram`.
pub(crate) fn spd_solve(
    gram: DMatrix<f64>,
    rhs: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    Ok(cholesky(gram, what)?.solve(rhs))
}

pub(crate) fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
