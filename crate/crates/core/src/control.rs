//! Deterministic LQR numerics: Riccati and Lyapunov solutions, optimal gains,
//! average costs and the computable membership test for the admissible set of
//! `(κ, γ)`-stabilizable, norm-bounded systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    solve_discrete_lyapunov, spectral_norm, spectral_radius, symmetrize,
};

/// Symmetry tolerance (Frobenius) for cost matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Trace of `P` above which value iteration is declared divergent.
pub const DARE_OVERFLOW_GUARD: f64 = 1e12;

/// A linear plant `x' = A x + B u`, equivalently `Θᵀ = [A B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SystemParams {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xd with d >= 1, got {:?}",
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite system entry".into()));
        }
        Ok(Self { a, b })
    }

    /// Scalar plant `x' = a x + b u`.
    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    /// The stacked `(n+d)×n` parameter `Θ = [A B]ᵀ`.
    pub fn theta(&self) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.d());
        let mut theta = DMatrix::zeros(n + d, n);
        theta.view_mut((0, 0), (n, n)).copy_from(&self.a.transpose());
        theta.view_mut((n, 0), (d, n)).copy_from(&self.b.transpose());
        theta
    }

    pub fn from_theta(theta: &DMatrix<f64>, n: usize) -> Result<Self> {
        if theta.ncols() != n || theta.nrows() <= n {
            return Err(Error::DimensionMismatch(format!(
                "theta of shape {:?} for n = {n}",
                theta.shape()
            )));
        }
        let d = theta.nrows() - n;
        let a = theta.view((0, 0), (n, n)).transpose();
        let b = theta.view((n, 0), (d, n)).transpose();
        Self::new(a, b)
    }

    /// `‖[A B]‖_F`.
    pub fn frobenius_norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared()).sqrt()
    }
}

/// Known positive-definite state and input weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrices {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostMatrices {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || m.is_empty() {
                return Err(Error::DimensionMismatch(format!("{name} must be square")));
            }
            if (m - m.transpose()).norm() > SYMMETRY_TOL {
                return Err(Error::InvalidConfig(format!("{name} is not symmetric")));
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::InvalidConfig(format!(
                    "{name} is not positive definite"
                )));
            }
        }
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, d: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(d, d),
        }
    }

    fn check_against(&self, sys: &SystemParams) -> Result<()> {
        if self.q.nrows() != sys.n() || self.r.nrows() != sys.d() {
            return Err(Error::DimensionMismatch(format!(
                "cost Q {:?} / R {:?} for n = {}, d = {}",
                self.q.shape(),
                self.r.shape(),
                sys.n(),
                sys.d()
            )));
        }
        Ok(())
    }

    /// `ᾱ`: an upper bound on `‖Q‖` and `‖R‖`.
    pub fn alpha_bar(&self) -> f64 {
        spectral_norm(&self.q).max(spectral_norm(&self.r))
    }
}

/// Stabilizing DARE solution with its induced gain and average cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// `σ_w² tr(P)`.
    pub j: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Value-iteration settings for [`solve_dare`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub sigma_w: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            sigma_w: 1.0,
        }
    }
}

impl DareOptions {
    pub fn with_sigma(sigma_w: f64) -> Self {
        Self {
            sigma_w,
            ..Self::default()
        }
    }
}

/// One Riccati map application. Returns `(Ric(P), K(P))`.
fn riccati_map(
    sys: &SystemParams,
    cost: &CostMatrices,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = (&sys.a, &sys.b);
    let bt_p = b.transpose() * p;
    let s = &cost.r + &bt_p * b;
    let g = &bt_p * a;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("R + BᵀPB is not positive definite".into()))?;
    let x = chol.solve(&g);
    let next = a.transpose() * p * a + &cost.q - g.transpose() * &x;
    Ok((next, -x))
}

/// Solves the DARE by value iteration starting at `P₀ = Q`.
pub fn solve_dare(
    sys: &SystemParams,
    cost: &CostMatrices,
    opts: &DareOptions,
) -> Result<RiccatiSolution> {
    solve_dare_from(sys, cost, &cost.q, opts)
}

/// Value iteration from an arbitrary positive semi-definite warm start.
pub fn solve_dare_from(
    sys: &SystemParams,
    cost: &CostMatrices,
    p0: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<RiccatiSolution> {
    cost.check_against(sys)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig("DARE tolerance must be positive".into()));
    }
    if p0.shape() != (sys.n(), sys.n()) {
        return Err(Error::DimensionMismatch("warm start has wrong shape".into()));
    }
    let mut p = symmetrize(p0);
    for it in 0..opts.max_iter {
        let (next, k) = riccati_map(sys, cost, &p)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "non-finite value-iteration iterate".into(),
            ));
        }
        let residual = (&next - &p).norm();
        if residual <= opts.tol {
            let j = opts.sigma_w * opts.sigma_w * p.trace();
            return Ok(RiccatiSolution {
                p,
                k,
                j,
                iterations: it,
                residual,
            });
        }
        p = symmetrize(&next);
        if p.trace() > DARE_OVERFLOW_GUARD {
            return Err(Error::NotStabilizable(format!(
                "tr(P) exceeded {DARE_OVERFLOW_GUARD:e} after {} iterations",
                it + 1
            )));
        }
    }
    Err(Error::NotStabilizable(format!(
        "value iteration did not converge in {} iterations",
        opts.max_iter
    )))
}

/// Frobenius norm of the DARE defect at `p`.
pub fn dare_residual(sys: &SystemParams, cost: &CostMatrices, p: &DMatrix<f64>) -> Result<f64> {
    let (next, _) = riccati_map(sys, cost, p)?;
    Ok((next - p).norm())
}

/// `A + B K`.
pub fn closed_loop(sys: &SystemParams, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.shape() != (sys.d(), sys.n()) {
        return Err(Error::DimensionMismatch(format!(
            "gain {:?} for n = {}, d = {}",
            k.shape(),
            sys.n(),
            sys.d()
        )));
    }
    Ok(&sys.a + &sys.b * k)
}

/// Stationary state covariance under `u = K x`: `Σ = A_c Σ A_cᵀ + σ_w² I`.
pub fn stationary_covariance(
    sys: &SystemParams,
    k: &DMatrix<f64>,
    sigma_w: f64,
) -> Result<DMatrix<f64>> {
    let ac = closed_loop(sys, k)?;
    let rho = spectral_radius(&ac)?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable(format!(
            "gain does not stabilize the system (rho = {rho})"
        )));
    }
    let n = sys.n();
    solve_discrete_lyapunov(&ac, &(DMatrix::identity(n, n) * (sigma_w * sigma_w)))
}

/// Average cost `tr((Q + KᵀRK) Σ)` of a fixed stabilizing gain.
pub fn closed_loop_cost(
    sys: &SystemParams,
    cost: &CostMatrices,
    k: &DMatrix<f64>,
    sigma_w: f64,
) -> Result<f64> {
    cost.check_against(sys)?;
    let sigma = stationary_covariance(sys, k, sigma_w)?;
    let weight = &cost.q + k.transpose() * &cost.r * k;
    Ok((weight * sigma).trace())
}

/// Jacobian `2 P A_c Σ` of `L(A_c) = σ_w² Σ_t ‖A_cᵗ‖²_{Q*}` at the optimal
/// closed loop, where `Q* = Q + KᵀRK`.
pub fn grad_l_at_optimum(
    sys: &SystemParams,
    cost: &CostMatrices,
    sigma_w: f64,
) -> Result<DMatrix<f64>> {
    let sol = solve_dare(sys, cost, &DareOptions::with_sigma(sigma_w))?;
    let ac = closed_loop(sys, &sol.k)?;
    let sigma = stationary_covariance(sys, &sol.k, sigma_w)?;
    Ok(&sol.p * &ac * &sigma * 2.0)
}

/// Gradient of `J(Θ) = σ_w² tr P(Θ)` with respect to the stacked `Θ`.
///
/// By the envelope property of the optimal gain, `∂J/∂A = 2 P A_c Σ` and
/// `∂J/∂B = 2 P A_c Σ Kᵀ` with `Σ` the stationary covariance of `A_c`.
pub fn optimal_cost_gradient(
    sys: &SystemParams,
    sol: &RiccatiSolution,
    sigma_w: f64,
) -> Result<DMatrix<f64>> {
    let ac = closed_loop(sys, &sol.k)?;
    let sigma = stationary_covariance(sys, &sol.k, sigma_w)?;
    let grad_a = &sol.p * &ac * &sigma * 2.0;
    let grad_b = &grad_a * sol.k.transpose();
    let (n, d) = (sys.n(), sys.d());
    let mut g = DMatrix::zeros(n + d, n);
    g.view_mut((0, 0), (n, n)).copy_from(&grad_a.transpose());
    g.view_mut((n, 0), (d, n)).copy_from(&grad_b.transpose());
    Ok(g)
}

/// `(κ, γ, S)` describing the admissible parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityParams {
    pub kappa: f64,
    pub gamma: f64,
    pub s_bound: f64,
}

impl StabilizabilityParams {
    pub fn new(kappa: f64, gamma: f64, s_bound: f64) -> Result<Self> {
        let p = Self {
            kappa,
            gamma,
            s_bound,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 1.0) {
            return Err(Error::InvalidConfig(format!("kappa = {} < 1", self.kappa)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {} outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.s_bound > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "s_bound = {} must be positive",
                self.s_bound
            )));
        }
        Ok(())
    }

    /// `D = ᾱ γ⁻¹ κ² (1 + κ²)`, the uniform bound on `‖P(Θ)‖` over the set.
    pub fn p_bound(&self, alpha_bar: f64) -> f64 {
        let k2 = self.kappa * self.kappa;
        alpha_bar / self.gamma * k2 * (1.0 + k2)
    }
}

/// First failed test of the membership check, or `Member`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MembershipReason {
    Member,
    FrobeniusBound,
    NotStabilizable,
    GainBound,
    SpectralMargin,
}

impl std::fmt::Display for MembershipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MembershipReason::Member => "Member",
            MembershipReason::FrobeniusBound => "FrobeniusBound",
            MembershipReason::NotStabilizable => "NotStabilizable",
            MembershipReason::GainBound => "GainBound",
            MembershipReason::SpectralMargin => "SpectralMargin",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Membership {
    pub reason: MembershipReason,
    pub frobenius_norm: f64,
    pub solution: Option<RiccatiSolution>,
    pub gain_norm: Option<f64>,
    pub closed_loop_radius: Option<f64>,
}

impl Membership {
    pub fn is_member(&self) -> bool {
        self.reason == MembershipReason::Member
    }
}

/// Membership test for the admissible set, solving the DARE from scratch.
pub fn membership_in_s(
    sys: &SystemParams,
    cost: &CostMatrices,
    params: &StabilizabilityParams,
) -> Result<Membership> {
    check_membership(sys, cost, params, &DareOptions::default(), None)
}

/// Membership test with explicit DARE settings and an optional warm start.
///
/// The checks run in order: `‖[A B]‖_F ≤ S`, DARE solvable, `‖K‖₂ ≤ κ`,
/// `ρ(A + B K) ≤ 1 − γ`.
pub fn check_membership(
    sys: &SystemParams,
    cost: &CostMatrices,
    params: &StabilizabilityParams,
    opts: &DareOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<Membership> {
    let frobenius_norm = sys.frobenius_norm();
    let mut out = Membership {
        reason: MembershipReason::FrobeniusBound,
        frobenius_norm,
        solution: None,
        gain_norm: None,
        closed_loop_radius: None,
    };
    if frobenius_norm > params.s_bound {
        return Ok(out);
    }
    let sol = match solve_dare_from(sys, cost, warm_start.unwrap_or(&cost.q), opts) {
        Ok(sol) => sol,
        Err(Error::NotStabilizable(_)) => {
            out.reason = MembershipReason::NotStabilizable;
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let gain_norm = spectral_norm(&sol.k);
    let rho = spectral_radius(&closed_loop(sys, &sol.k)?)?;
    out.gain_norm = Some(gain_norm);
    out.closed_loop_radius = Some(rho);
    out.reason = if gain_norm > params.kappa {
        MembershipReason::GainBound
    } else if rho > 1.0 - params.gamma {
        MembershipReason::SpectralMargin
    } else {
        MembershipReason::Member
    };
    out.solution = Some(sol);
    Ok(out)
}
