//! Dense linear solves for the Bellman systems. Every evaluation in this
//! crate reduces to `(I - M) x = b` with `M` a substochastic matrix scaled by
//! a discount below one, so the systems are non-singular and well conditioned.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves `(I - m) x = rhs` for one or many right-hand sides.
pub(crate) fn solve_resolvent(m: &DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let system = DMatrix::<f64>::identity(n, n) - m;
    solve(system, rhs)
}

pub(crate) fn solve(system: DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = system.lu();
    lu.solve(&rhs).ok_or(Error::Singular)
}

pub(crate) fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

pub(crate) fn sup_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
