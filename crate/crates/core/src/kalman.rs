//! Kalman covariance recursion, the steady-state DARE solution and the
//! effective dimension `‖P‖_F`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::model::{frobenius, frobenius_norm, matrix_rows, LinearGaussianProblem, SymMatrix};

/// Default relative convergence tolerance of [`solve_dare`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap of [`solve_dare`].
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Relative DARE residual accepted for a converged solve.
pub const DARE_RESIDUAL_TOL: f64 = 1e-8;

/// Steady state of the covariance recursion.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    /// DARE solution, the steady prior covariance.
    #[serde(rename = "X")]
    pub x: SymMatrix,
    /// Steady Kalman gain (m×k).
    #[serde(rename = "K", serialize_with = "matrix_rows")]
    pub k: DMatrix<f64>,
    /// Steady posterior covariance.
    #[serde(rename = "P")]
    pub p: SymMatrix,
    pub eff_dim: f64,
    pub iterations: usize,
    /// Frobenius change of the final iteration.
    pub residual: f64,
}

impl SteadyState {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("steady state serializes")
    }
}

/// `A P Aᵀ + Q`.
pub fn prior_covariance(problem: &LinearGaussianProblem, p: &SymMatrix) -> SymMatrix {
    let a = &problem.a;
    SymMatrix::symmetrized(a * p.as_matrix() * a.transpose() + &problem.q)
}

/// Gain `X Hᵀ (H X Hᵀ + R)⁻¹` and the factor of the innovation covariance.
pub fn kalman_gain(
    problem: &LinearGaussianProblem,
    x: &SymMatrix,
) -> Result<(DMatrix<f64>, SpdFactor)> {
    let h = &problem.h;
    let hx = h * x.as_matrix();
    let s = linalg::symmetrize(&(&hx * h.transpose() + &problem.r));
    let factor = linalg::innovation_factor(&s)?;
    // K = X Hᵀ S⁻¹ = (S⁻¹ H X)ᵀ since X and S are symmetric.
    let gain = factor.solve(&hx).transpose();
    Ok((gain, factor))
}

fn posterior_from_prior(problem: &LinearGaussianProblem, x: &SymMatrix) -> Result<SymMatrix> {
    let (gain, _) = kalman_gain(problem, x)?;
    let khx = &gain * (&problem.h * x.as_matrix());
    Ok(SymMatrix::symmetrized(x.as_matrix() - khx))
}

/// One step `Pₙ ↦ Pₙ₊₁ = (I − KₙH)(APₙAᵀ + Q)`.
pub fn kalman_cov_step(problem: &LinearGaussianProblem, p_n: &SymMatrix) -> Result<SymMatrix> {
    let m = problem.state_dim();
    if p_n.order() != m {
        return Err(Error::Dimension(format!(
            "covariance of order {} for state dimension {m}",
            p_n.order()
        )));
    }
    posterior_from_prior(problem, &prior_covariance(problem, p_n))
}

/// `‖X − (AXAᵀ − AXHᵀ(HXHᵀ+R)⁻¹HXAᵀ + Q)‖_F`.
pub fn dare_residual(problem: &LinearGaussianProblem, x: &SymMatrix) -> Result<f64> {
    let p = posterior_from_prior(problem, x)?;
    let rhs = prior_covariance(problem, &p);
    Ok(frobenius_norm(&(x.as_matrix() - rhs.as_matrix())))
}

/// Steady state by fixed-point iteration of [`kalman_cov_step`] from `P₀ = Σ₀`.
///
/// Stops when `‖Pₙ₊₁ − Pₙ‖_F ≤ tol·(1 + ‖Pₙ₊₁‖_F)`.
pub fn solve_dare(
    problem: &LinearGaussianProblem,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut p = SymMatrix::symmetrized(problem.sigma0.clone());
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let next = kalman_cov_step(problem, &p)?;
        residual = frobenius_norm(&(next.as_matrix() - p.as_matrix()));
        if !residual.is_finite() {
            return Err(Error::NoConvergence { iterations: iteration, residual });
        }
        p = next;
        if residual <= tol * (1.0 + p.frobenius()) {
            let x = prior_covariance(problem, &p);
            let (k, _) = kalman_gain(problem, &x)?;
            return Ok(SteadyState {
                eff_dim: frobenius(&p),
                x,
                k,
                p,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// [`solve_dare`] with [`DEFAULT_TOL`] and [`DEFAULT_MAX_ITER`].
pub fn solve_dare_default(problem: &LinearGaussianProblem) -> Result<SteadyState> {
    solve_dare(problem, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Per-component steady posterior variance `(√(q²+4qr) − q)/2` of the
/// isotropic problem `A = H = I`, `Q = qI`, `R = rI`.
pub fn isotropic_steady_p(q: f64, r: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Domain(format!("q must be finite and nonnegative, got {q}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("r must be finite and positive, got {r}")));
    }
    // Rationalized form, free of cancellation when q ≫ r.
    let root = (q * q + 4.0 * q * r).sqrt();
    if root == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * q * r / (root + q))
}

/// Moments of the squared distance `y = r²` of a posterior sample from the mean,
/// and the leading-order mean `Ê(r)` and variance `v̂(r)` of the distance itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadStats {
    pub eigenvalues: Vec<f64>,
    pub mean_y: f64,
    pub var_y: f64,
    pub e_hat: f64,
    pub v_hat: f64,
}

pub fn spread_stats(p: &SymMatrix) -> SpreadStats {
    let eigenvalues = p.eigenvalues();
    let s1: f64 = eigenvalues.iter().sum();
    let s2: f64 = eigenvalues.iter().map(|l| l * l).sum();
    if s1 <= 0.0 {
        return SpreadStats {
            eigenvalues: eigenvalues.iter().map(|_| 0.0).collect(),
            mean_y: 0.0,
            var_y: 0.0,
            e_hat: 0.0,
            v_hat: 0.0,
        };
    }
    SpreadStats {
        mean_y: s1,
        var_y: 2.0 * s2,
        e_hat: (4.0 * s1 * s1 - 2.0 * s2) / (4.0 * s1.powf(1.5)),
        v_hat: s2 / (2.0 * s1),
        eigenvalues,
    }
}

/// `‖P‖_F` of the steady posterior covariance.
pub fn effective_dimension(problem: &LinearGaussianProblem) -> Result<f64> {
    solve_dare_default(problem).map(|s| s.eff_dim)
}

/// Filter means and posterior covariances `μ₀, P₀, …, μₙ, Pₙ`.
#[derive(Debug, Clone)]
pub struct KalmanEstimate {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<SymMatrix>,
}

/// Run the full Kalman filter over `z¹..zⁿ` starting from `(μ₀, Σ₀)`.
pub fn kalman_filter(
    problem: &LinearGaussianProblem,
    observations: &[DVector<f64>],
) -> Result<KalmanEstimate> {
    let k = problem.data_dim();
    let mut mean = problem.mu0.clone();
    let mut cov = SymMatrix::symmetrized(problem.sigma0.clone());
    let mut means = vec![mean.clone()];
    let mut covariances = vec![cov.clone()];
    for (n, z) in observations.iter().enumerate() {
        if z.len() != k {
            return Err(Error::Dimension(format!(
                "observation {} has length {}, expected {k}",
                n + 1,
                z.len()
            )));
        }
        let x = prior_covariance(problem, &cov);
        let (gain, _) = kalman_gain(problem, &x)?;
        let predicted = &problem.a * &mean;
        mean = &predicted + &gain * (z - &problem.h * &predicted);
        cov = SymMatrix::symmetrized(x.as_matrix() - &gain * (&problem.h * x.as_matrix()));
        means.push(mean.clone());
        covariances.push(cov.clone());
    }
    Ok(KalmanEstimate { means, covariances })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9; // (√5 − 1)/2

    #[test]
    fn scalar_step_hand_value() {
        let p = LinearGaussianProblem::isotropic(1, 1.0, 1.0, 0.0).unwrap();
        let next = kalman_cov_step(&p, &SymMatrix::zeros(1)).unwrap();
        assert!((next.as_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_model_stays_perfect() {
        let p = LinearGaussianProblem::isotropic(2, 0.0, 1.0, 0.0).unwrap();
        let next = kalman_cov_step(&p, &SymMatrix::zeros(2)).unwrap();
        assert_eq!(next.frobenius(), 0.0);
    }

    #[test]
    fn isotropic_iteration_reaches_golden_ratio() {
        let p = LinearGaussianProblem::isotropic(3, 1.0, 1.0, 0.0).unwrap();
        let mut cov = SymMatrix::zeros(3);
        for _ in 0..100 {
            cov = kalman_cov_step(&p, &cov).unwrap();
        }
        for i in 0..3 {
            assert!((cov.as_matrix()[(i, i)] - GOLDEN).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let mut p = LinearGaussianProblem::isotropic(2, 0.0, 1.0, 0.0).unwrap();
        p.r[(1, 1)] = 1e-20;
        assert!(matches!(
            kalman_cov_step(&p, &SymMatrix::zeros(2)),
            Err(Error::InnovationSingular(_))
        ));
    }

    #[test]
    fn isotropic_dare_effective_dimension() {
        let p = LinearGaussianProblem::isotropic(5, 1.0, 1.0, 0.0).unwrap();
        let ss = solve_dare_default(&p).unwrap();
        assert!((ss.eff_dim - 5f64.sqrt() * GOLDEN).abs() < 1e-9);
        assert!((ss.eff_dim - 1.381966).abs() < 1e-6);
        assert_eq!(ss.eff_dim, frobenius(&ss.p));
    }

    #[test]
    fn perfect_model_limit_drives_p_to_zero() {
        let p = LinearGaussianProblem::isotropic(1, 0.0, 2.0, 1.0).unwrap();
        let ss = solve_dare(&p, DEFAULT_TOL, 1_000_000).unwrap();
        assert!(ss.eff_dim < 1e-4, "{}", ss.eff_dim);
        let p = LinearGaussianProblem::isotropic(100, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(effective_dimension(&p).unwrap(), 0.0);
    }

    #[test]
    fn scaled_isotropic_effective_dimension() {
        let m = 100;
        let c = 1.0 / m as f64;
        let p = LinearGaussianProblem::isotropic(m, c, c, 0.0).unwrap();
        let expected = (5f64.sqrt() - 1.0) / (2.0 * (m as f64).sqrt());
        let got = effective_dimension(&p).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.max(1.0));
        assert!((got - 0.0618034).abs() < 1e-7);
    }

    #[test]
    fn isotropic_closed_form_values() {
        assert!((isotropic_steady_p(1.0, 1.0).unwrap() - GOLDEN).abs() < 1e-15);
        assert_eq!(isotropic_steady_p(0.0, 3.0).unwrap(), 0.0);
        let v = isotropic_steady_p(0.01, 1.0).unwrap();
        assert!((v - 0.0951249).abs() < 1e-7);
        let p = LinearGaussianProblem::isotropic(1, 0.01, 1.0, 0.0).unwrap();
        let ss = solve_dare(&p, 1e-13, DEFAULT_MAX_ITER).unwrap();
        assert!((ss.p.as_matrix()[(0, 0)] - v).abs() < 1e-10);
        assert!(isotropic_steady_p(-1.0, 1.0).is_err());
        assert!(isotropic_steady_p(1.0, 0.0).is_err());
    }

    #[test]
    fn spread_stats_examples() {
        let s = spread_stats(&SymMatrix::identity(100));
        assert!((s.mean_y - 100.0).abs() < 1e-10);
        assert!((s.var_y - 200.0).abs() < 1e-10);
        assert!((s.e_hat - 9.95).abs() < 1e-10);
        assert!((s.v_hat - 0.5).abs() < 1e-12);

        let z = spread_stats(&SymMatrix::zeros(3));
        assert_eq!((z.mean_y, z.var_y, z.e_hat, z.v_hat), (0.0, 0.0, 0.0, 0.0));

        let d = spread_stats(&SymMatrix::from_diagonal(&[4.0]));
        assert_eq!(d.mean_y, 4.0);
        assert_eq!(d.var_y, 32.0);
        assert_eq!(d.e_hat, 1.0);
        // Σλ²/(2Σλ) = 16/8.
        assert_eq!(d.v_hat, 2.0);
    }

    #[test]
    fn e_hat_tracks_sqrt_of_mean_for_large_m() {
        for m in [50, 80, 200] {
            let s = spread_stats(&SymMatrix::identity(m));
            let ratio = s.e_hat / s.mean_y.sqrt();
            assert!((0.9..=1.0).contains(&ratio), "m={m} ratio={ratio}");
        }
    }

    #[test]
    fn nonconvergence_reports_residual() {
        // Unstable and unobserved: P grows without bound.
        let mut p = LinearGaussianProblem::isotropic(1, 1.0, 1.0, 0.0).unwrap();
        p.a[(0, 0)] = 2.0;
        p.h[(0, 0)] = 0.0;
        match solve_dare(&p, DEFAULT_TOL, 50) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 50);
                assert!(residual > 1.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn steady_state_json_keys() {
        let p = LinearGaussianProblem::isotropic(2, 1.0, 1.0, 0.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&solve_dare_default(&p).unwrap().to_json()).unwrap();
        for key in ["X", "K", "P", "eff_dim", "iterations", "residual"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["K"].as_array().unwrap().len(), 2);
    }
}
