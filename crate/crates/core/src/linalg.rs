//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices and is sized for
//! desk-scale problems (a handful of states and inputs).

use nalgebra::linalg::{Schur, SymmetricEigen};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this are clamped before taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite matrix entry".into()));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Largest singular value, from the eigenvalues of the Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let top = SymmetricEigen::new(gram).eigenvalues.max();
    top.max(0.0).sqrt()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// `V^{p}` for symmetric positive-definite `V`, with eigenvalues clamped at
/// [`EIGEN_FLOOR`].
pub fn sym_power(v: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(v));
    let vals = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR).powf(p));
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&vals) * u.transpose()
}

pub fn sym_sqrt(v: &DMatrix<f64>) -> DMatrix<f64> {
    sym_power(v, 0.5)
}

pub fn sym_inv_sqrt(v: &DMatrix<f64>) -> DMatrix<f64> {
    sym_power(v, -0.5)
}

/// Solves `X = A X Aᵀ + W` by the Kronecker (vectorised) formulation.
///
/// Requires that no two eigenvalues of `A` multiply to one, which holds for
/// every Schur-stable `A`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || w.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov with A {:?} and W {:?}",
            a.shape(),
            w.shape()
        )));
    }
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - a.kronecker(a);
    let rhs = DVector::from_column_slice(w.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Lyapunov operator".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite Lyapunov solution".into()));
    }
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Frobenius inner product `tr(A Bᵀ)`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
