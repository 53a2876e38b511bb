//! Online regularized least-squares identification of `Θ = [A B]ᵀ` with
//! self-normalized confidence radii.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, sym_inv_sqrt};

/// Running regularized least-squares state.
///
/// `v = μI + Σ z zᵀ`, `cross = Σ z x₊ᵀ` and `theta_hat = v⁻¹ cross`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    pub v: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub theta_hat: DMatrix<f64>,
    pub mu: f64,
    pub t: usize,
    pub sigma_w: f64,
    pub s_bound: f64,
    pub delta: f64,
    pub n: usize,
    pub d: usize,
}

/// `β_t(δ)` for the estimation ellipsoid and `υ_t(δ)` for the sampling one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRadii {
    pub beta: f64,
    pub upsilon: f64,
}

impl RlsState {
    pub fn new(n: usize, d: usize, mu: f64, sigma_w: f64, s_bound: f64, delta: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu = {mu} must be positive")));
        }
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_w = {sigma_w} must be positive"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta = {delta} outside (0, 1)")));
        }
        if !(s_bound >= 0.0) {
            return Err(Error::InvalidConfig(format!("s_bound = {s_bound} is negative")));
        }
        let m = n + d;
        Ok(Self {
            v: DMatrix::identity(m, m) * mu,
            cross: DMatrix::zeros(m, n),
            theta_hat: DMatrix::zeros(m, n),
            mu,
            t: 0,
            sigma_w,
            s_bound,
            delta,
            n,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.n + self.d
    }

    /// Adds the regressor `z = (x, u)` and its successor state.
    pub fn update(&mut self, z: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() || x_next.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "rls update with z of length {} and x_next of length {}",
                z.len(),
                x_next.len()
            )));
        }
        if z.iter().chain(x_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite regression data".into()));
        }
        self.v.ger(1.0, z, z, 1.0);
        self.cross.ger(1.0, z, x_next, 1.0);
        self.t += 1;
        self.theta_hat = self.solve(&self.cross)?;
        Ok(())
    }

    /// `V⁻¹ rhs` via Cholesky. When round-off breaks the factorization
    /// (regressors spanning many orders of magnitude), falls back to an
    /// eigen-decomposition with eigenvalues clamped at `μ`, which `V ⪰ μI`
    /// makes exact in infinite precision.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let out = match self.v.clone().cholesky() {
            Some(chol) => chol.solve(rhs),
            None => {
                let eig = self.clamped_eigen()?;
                let inv = eig.eigenvalues.map(|l| 1.0 / l);
                &eig.eigenvectors * DMatrix::from_diagonal(&inv) * (eig.eigenvectors.transpose() * rhs)
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite least-squares solution".into()));
        }
        Ok(out)
    }

    fn clamped_eigen(&self) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
        if self.v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite design matrix".into()));
        }
        let mut eig = crate::linalg::symmetrize(&self.v).symmetric_eigen();
        let mu = self.mu;
        eig.eigenvalues.apply(|l| *l = l.max(mu));
        Ok(eig)
    }

    pub fn log_det_v(&self) -> Result<f64> {
        let ld: f64 = match self.v.clone().cholesky() {
            Some(chol) => chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum(),
            None => self.clamped_eigen()?.eigenvalues.iter().map(|l| l.ln()).sum(),
        };
        if !ld.is_finite() {
            return Err(Error::NumericalFailure("non-finite log-determinant".into()));
        }
        Ok(ld)
    }

    /// `β_t = σ_w √(2n log(det(V)^{1/2} / (δ det(μI)^{1/2}))) + √μ S` and
    /// `υ_t = β_t n √((n+d) log(n(n+d)/δ))`.
    pub fn confidence_radii(&self) -> Result<ConfidenceRadii> {
        let m = self.dim() as f64;
        let n = self.n as f64;
        let log_ratio = 0.5 * (self.log_det_v()? - m * self.mu.ln()) - self.delta.ln();
        let beta = self.sigma_w * (2.0 * n * log_ratio.max(0.0)).sqrt()
            + self.mu.sqrt() * self.s_bound;
        let upsilon = beta * n * (m * (n * m / self.delta).ln()).sqrt();
        Ok(ConfidenceRadii { beta, upsilon })
    }

    /// `‖V^{1/2}(Θ − Θ̂)‖_F`.
    pub fn weighted_distance(&self, theta: &DMatrix<f64>) -> Result<f64> {
        if theta.shape() != self.theta_hat.shape() {
            return Err(Error::DimensionMismatch(format!(
                "theta {:?} vs estimate {:?}",
                theta.shape(),
                self.theta_hat.shape()
            )));
        }
        let delta = theta - &self.theta_hat;
        Ok((delta.transpose() * &self.v * &delta).trace().max(0.0).sqrt())
    }

    pub fn in_confidence_set(&self, theta: &DMatrix<f64>) -> Result<bool> {
        Ok(self.weighted_distance(theta)? <= self.confidence_radii()?.beta)
    }

    pub fn min_eigenvalue_v(&self) -> f64 {
        min_sym_eigenvalue(&self.v)
    }

    pub fn v_inv_sqrt(&self) -> DMatrix<f64> {
        sym_inv_sqrt(&self.v)
    }
}
