//! Closed-form matrix bounds on the DARE solution `X` and on the steady
//! posterior covariance `P`, giving a cheap upper bound on `‖P‖_F`.
//!
//! Both DARE bounds are one or two sweeps of the Riccati map
//! `Y ↦ A (Y⁻¹ + HᵀR⁻¹H)⁻¹ Aᵀ + Q` from a known bracket: the lower bound
//! starts from `Q ≤ X`, the upper bound from `ηI ≥ X` where `η` bounds the
//! largest eigenvalue of `X`. The map is evaluated in its information-free form
//! `(Y⁻¹ + HᵀR⁻¹H)⁻¹ = Y − YHᵀ(HYHᵀ + R)⁻¹HY` so no explicit inverse of `Y` is
//! formed.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LinearGaussianProblem, SymMatrix};

/// Relative size of the ridge added to a singular `Q`.
pub const Q_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct DareBounds {
    pub x_lower: SymMatrix,
    pub x_upper: SymMatrix,
    pub p_upper: SymMatrix,
    /// `‖P_upper‖_F`.
    pub eff_dim_upper: f64,
    /// Scalar bound on the largest eigenvalue of `X`.
    pub eta: f64,
    /// `Q` was singular and a ridge `Q_RIDGE·tr(Q)/m·I` was added.
    pub q_regularized: bool,
}

/// `Y − YHᵀ(HYHᵀ + R)⁻¹HY`, i.e. `(Y⁻¹ + HᵀR⁻¹H)⁻¹` for invertible `Y`.
fn information_update(problem: &LinearGaussianProblem, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let h = &problem.h;
    let hy = h * y;
    let s = linalg::symmetrize(&(&hy * h.transpose() + &problem.r));
    let factor = linalg::SpdFactor::spd(&s, "H Y Hᵀ + R")?;
    Ok(linalg::symmetrize(&(y - hy.transpose() * factor.solve(&hy))))
}

fn riccati_map(problem: &LinearGaussianProblem, y: &DMatrix<f64>) -> Result<SymMatrix> {
    let a = &problem.a;
    let inner = information_update(problem, y)?;
    Ok(SymMatrix::symmetrized(a * inner * a.transpose() + &problem.q))
}

/// `Q`, ridged when singular, and whether the ridge was needed.
fn invertible_q(problem: &LinearGaussianProblem) -> Result<(LinearGaussianProblem, bool)> {
    if linalg::SpdFactor::spd(&problem.q, "Q").is_ok() {
        return Ok((problem.clone(), false));
    }
    let m = problem.state_dim();
    let trace = problem.q.trace();
    if !(trace > 0.0) {
        return Err(Error::LowerBoundSingularQ);
    }
    let mut ridged = problem.clone();
    ridged.q += DMatrix::identity(m, m) * (Q_RIDGE * trace / m as f64);
    if linalg::SpdFactor::spd(&ridged.q, "Q").is_err() {
        return Err(Error::LowerBoundSingularQ);
    }
    Ok((ridged, true))
}

/// Observation information `HᵀR⁻¹H`.
pub fn observation_information(problem: &LinearGaussianProblem) -> Result<SymMatrix> {
    let r_inv = linalg::spd_inverse(&problem.r, "R")?;
    let h = &problem.h;
    Ok(SymMatrix::symmetrized(h.transpose() * r_inv * h))
}

/// Lower bound `X_l = A(Q⁻¹ + HᵀR⁻¹H)⁻¹Aᵀ + Q ≤ X`.
pub fn dare_lower_bound(problem: &LinearGaussianProblem) -> Result<SymMatrix> {
    let (problem, _) = invertible_q(problem)?;
    riccati_map(&problem, &problem.q)
}

/// Eigenvalue bound `η ≥ λ_max(X)`.
///
/// `η` is the positive root of `g·x² + (1 − α − g·q)·x − q = 0` with
/// `α = λ_max(AAᵀ)`, `g = λ_min(HᵀR⁻¹H)` and `q = λ_max(Q)`; written as
/// `f(a, b, c) = (√(a² + bc) − a)/b` with `a = 1 − α − g·q`, `b = 2g`, `c = 2q`.
pub fn eigenvalue_bound(problem: &LinearGaussianProblem) -> Result<f64> {
    let info = observation_information(problem)?;
    let g = info.eigenvalues().first().copied().unwrap_or(0.0).max(0.0);
    let aat = linalg::symmetrize(&(&problem.a * problem.a.transpose()));
    let alpha = linalg::sym_eigenvalues(&aat).last().copied().unwrap_or(0.0);
    let q_max = linalg::sym_eigenvalues(&problem.q).last().copied().unwrap_or(0.0);

    let a = 1.0 - alpha - g * q_max;
    let b = 2.0 * g;
    let c = 2.0 * q_max;
    let root = (a * a + b * c).sqrt();
    let eta = if a > 0.0 {
        c / (root + a)
    } else if b > 0.0 {
        (root - a) / b
    } else {
        return Err(Error::UpperBoundInapplicable(format!(
            "λ_max(AAᵀ) = {alpha} ≥ 1 with rank-deficient HᵀR⁻¹H"
        )));
    };
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::UpperBoundInapplicable(format!("η = {eta}")));
    }
    Ok(eta)
}

/// Upper bound `X ≤ X_u = A(X_*⁻¹ + HᵀR⁻¹H)⁻¹Aᵀ + Q` with
/// `X_* = A(η⁻¹I + HᵀR⁻¹H)⁻¹Aᵀ + Q`; returns `(X_u, η)`.
pub fn dare_upper_bound(problem: &LinearGaussianProblem) -> Result<(SymMatrix, f64)> {
    let (problem, _) = invertible_q(problem).map_err(|_| {
        Error::UpperBoundInapplicable("upper bound requires positive definite Q".into())
    })?;
    let eta = eigenvalue_bound(&problem)?;
    let m = problem.state_dim();
    let x_star = riccati_map(&problem, &(DMatrix::identity(m, m) * eta))?;
    let x_upper = riccati_map(&problem, x_star.as_matrix())?;
    Ok((x_upper, eta))
}

/// Assemble both DARE bounds and `P ≤ X_u − X_l Hᵀ(H X_u Hᵀ + R)⁻¹ H X_l`.
pub fn p_upper_bound(problem: &LinearGaussianProblem) -> Result<DareBounds> {
    let (_, q_regularized) = invertible_q(problem)?;
    let x_lower = dare_lower_bound(problem)?;
    let (x_upper, eta) = dare_upper_bound(problem)?;

    let h = &problem.h;
    let s = linalg::symmetrize(&(h * x_upper.as_matrix() * h.transpose() + &problem.r));
    let factor = linalg::SpdFactor::spd(&s, "H X_u Hᵀ + R")?;
    let hxl = h * x_lower.as_matrix();
    let p_upper =
        SymMatrix::symmetrized(x_upper.as_matrix() - hxl.transpose() * factor.solve(&hxl));
    Ok(DareBounds {
        eff_dim_upper: p_upper.frobenius(),
        x_lower,
        x_upper,
        p_upper,
        eta,
        q_regularized,
    })
}
