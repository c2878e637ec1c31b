//! Strong- and weak-constraint smoothing posteriors.
//!
//! Strong constraint (`Q = 0`): the posterior over `x⁰` given `z¹..zⁿ`.
//! Weak constraint: the posterior over the whole trajectory `x⁰..xⁿ`, whose
//! precision is block tridiagonal and is handled block by block.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::balance::{build_map, BalanceKind, BalanceMap};
use crate::error::{Error, Result};
use crate::filters::{self, CollapseReport, ParticleEnsemble};
use crate::linalg::{self, SpdFactor};
use crate::model::{frobenius_norm, LinearGaussianProblem, SymMatrix, PSD_TOL};
use crate::rng::{self, Purpose};

/// Above this trajectory size only the diagonal covariance blocks are formed.
pub const FULL_INVERSE_LIMIT: usize = 2000;

/// `σ₀r/(σ₀+r)`, the per-component strong-constraint posterior variance after one observation.
pub fn g_strong(sigma0: f64, r: f64) -> Result<f64> {
    if !(sigma0 >= 0.0) || !sigma0.is_finite() || !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("need σ₀ ≥ 0 and r > 0, got σ₀={sigma0}, r={r}")));
    }
    Ok(sigma0 * r / (sigma0 + r))
}

/// Balance map of `g_strong` over `(σ₀, r)` with level sets at `c/√m`.
pub fn strong_balance_map(
    sigma0_grid: &[f64],
    r_grid: &[f64],
    dims: &[usize],
    constant: f64,
) -> Result<BalanceMap> {
    build_map(BalanceKind::StrongConstraint, sigma0_grid, r_grid, dims, constant)
}

fn check_observations(problem: &LinearGaussianProblem, observations: &[DVector<f64>]) -> Result<()> {
    let k = problem.data_dim();
    if let Some(j) = observations.iter().position(|z| z.len() != k) {
        return Err(Error::Dimension(format!(
            "observation {} has length {}, expected {k}",
            j + 1,
            observations[j].len()
        )));
    }
    Ok(())
}

/// `HᵀR⁻¹H` and `HᵀR⁻¹`.
fn data_information(problem: &LinearGaussianProblem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r_inv = linalg::spd_inverse(&problem.r, "R")?;
    let ht_rinv = problem.h.transpose() * r_inv;
    let g = linalg::symmetrize(&(&ht_rinv * &problem.h));
    Ok((g, ht_rinv))
}

#[derive(Debug, Clone, Serialize)]
pub struct StrongConstraintPosterior {
    pub precision: SymMatrix,
    pub covariance: SymMatrix,
    pub frob_cov: f64,
    pub n_data: usize,
}

/// `Σ⁻¹ = Σ₀⁻¹ + Σⱼ₌₁ⁿ (Aʲ)ᵀHᵀR⁻¹HAʲ`; `Q` is ignored.
pub fn strong_precision(problem: &LinearGaussianProblem, n: usize) -> Result<StrongConstraintPosterior> {
    let sigma0_inv = linalg::spd_inverse(&problem.sigma0, "Sigma0")?;
    let (g, _) = data_information(problem)?;
    let a = &problem.a;
    // T ← Aᵀ(G + T)A, n times.
    let mut t = DMatrix::zeros(a.nrows(), a.nrows());
    for _ in 0..n {
        t = a.transpose() * (&g + &t) * a;
    }
    let precision = linalg::symmetrize(&(sigma0_inv + t));
    let covariance = linalg::spd_inverse(&precision, "strong-constraint precision")?;
    Ok(StrongConstraintPosterior {
        frob_cov: frobenius_norm(&covariance),
        precision: SymMatrix::symmetrized(precision),
        covariance: SymMatrix::symmetrized(covariance),
        n_data: n,
    })
}

/// Posterior mode (= mean) of `x⁰` under the strong constraint.
pub fn strong_mode(problem: &LinearGaussianProblem, observations: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_observations(problem, observations)?;
    let post = strong_precision(problem, observations.len())?;
    let (_, ht_rinv) = data_information(problem)?;
    let a = &problem.a;
    let mut t = DVector::zeros(a.nrows());
    for z in observations.iter().rev() {
        t = a.transpose() * (&ht_rinv * z + t);
    }
    let sigma0 = SpdFactor::spd(&problem.sigma0, "Sigma0")?;
    let rhs = sigma0.solve_vec(&problem.mu0) + t;
    Ok(post.covariance.as_matrix() * rhs)
}

/// `−φ(x⁰) = −½Σⱼ (zʲ − HAʲx⁰)ᵀR⁻¹(zʲ − HAʲx⁰)`.
pub fn sir_smoother_log_weight(
    problem: &LinearGaussianProblem,
    x0: &DVector<f64>,
    observations: &[DVector<f64>],
) -> Result<f64> {
    if x0.len() != problem.state_dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            problem.state_dim()
        )));
    }
    check_observations(problem, observations)?;
    let r = SpdFactor::spd(&problem.r, "R")?;
    Ok(sir_log_weight_with(problem, &r, x0, observations))
}

fn sir_log_weight_with(
    problem: &LinearGaussianProblem,
    r: &SpdFactor,
    x0: &DVector<f64>,
    observations: &[DVector<f64>],
) -> f64 {
    let mut x = x0.clone();
    let mut phi = 0.0;
    for z in observations {
        x = &problem.a * x;
        phi += r.inv_quad(&(z - &problem.h * &x));
    }
    -0.5 * phi
}

/// Weight `N` prior draws `x⁰ ~ N(μ₀, Σ₀)` by `exp(−φ)`.
pub fn sir_smoother_ensemble(
    problem: &LinearGaussianProblem,
    observations: &[DVector<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<(ParticleEnsemble, CollapseReport)> {
    check_observations(problem, observations)?;
    let r = SpdFactor::spd(&problem.r, "R")?;
    let mut ensemble = ParticleEnsemble::from_gaussian(&problem.mu0, &problem.sigma0, n_samples, seed)?;
    ensemble.log_weights = ensemble
        .positions
        .par_iter()
        .map(|x| sir_log_weight_with(problem, &r, x, observations))
        .collect();
    ensemble.normalized = false;
    let report = filters::diagnostics(&ensemble)?;
    Ok((ensemble, report))
}

/// `‖HAΣ₀AᵀHᵀR⁻¹‖_F`, which governs the spread of one-step smoother weights.
pub fn sir_smoother_stat(problem: &LinearGaussianProblem) -> Result<f64> {
    let r_inv = linalg::spd_inverse(&problem.r, "R")?;
    let ha = &problem.h * &problem.a;
    Ok(frobenius_norm(&(&ha * &problem.sigma0 * ha.transpose() * r_inv)))
}

/// `‖H‖²‖A‖²‖Σ₀‖ ≤ ‖R‖` (Frobenius norms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmootherCondition {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn sir_smoother_condition(problem: &LinearGaussianProblem) -> SmootherCondition {
    let lhs = frobenius_norm(&problem.h).powi(2)
        * frobenius_norm(&problem.a).powi(2)
        * frobenius_norm(&problem.sigma0);
    let rhs = frobenius_norm(&problem.r);
    SmootherCondition { lhs, rhs, holds: lhs <= rhs }
}

/// Symmetric block tridiagonal matrix; `lower[i]` is block `(i+1, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    pub fn order(&self) -> usize {
        self.n_blocks() * self.block_size()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let b = self.block_size();
        let mut out = DMatrix::zeros(self.order(), self.order());
        for (i, d) in self.diag.iter().enumerate() {
            out.view_mut((i * b, i * b), (b, b)).copy_from(d);
        }
        for (i, l) in self.lower.iter().enumerate() {
            out.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(l);
            out.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&l.transpose());
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let b = self.block_size();
        let mut out = DVector::zeros(self.order());
        for i in 0..self.n_blocks() {
            let mut row = &self.diag[i] * x.rows(i * b, b);
            if i > 0 {
                row += &self.lower[i - 1] * x.rows((i - 1) * b, b);
            }
            if i + 1 < self.n_blocks() {
                row += self.lower[i].transpose() * x.rows((i + 1) * b, b);
            }
            out.rows_mut(i * b, b).copy_from(&row);
        }
        out
    }

    /// Block Cholesky `LLᵀ`, with `L` block lower bidiagonal.
    pub fn cholesky(&self) -> Result<BlockCholesky> {
        let mut diag = Vec::with_capacity(self.n_blocks());
        let mut lower = Vec::with_capacity(self.lower.len());
        let mut schur = self.diag[0].clone();
        for i in 0..self.n_blocks() {
            let f = SpdFactor::spd(&linalg::symmetrize(&schur), "weak-constraint precision")?;
            if i + 1 < self.n_blocks() {
                // Cᵢ = Bᵢ₊₁Lᵢ⁻ᵀ
                let c = f
                    .lower()
                    .solve_lower_triangular(&self.lower[i].transpose())
                    .expect("Cholesky factor has a nonzero diagonal")
                    .transpose();
                schur = &self.diag[i + 1] - &c * c.transpose();
                lower.push(c);
            }
            diag.push(f);
        }
        Ok(BlockCholesky { diag, lower })
    }
}

#[derive(Debug, Clone)]
pub struct BlockCholesky {
    diag: Vec<SpdFactor>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockCholesky {
    fn block_size(&self) -> usize {
        self.diag[0].lower().nrows()
    }

    fn l_inv(&self, i: usize) -> DMatrix<f64> {
        let b = self.block_size();
        self.diag[i]
            .lower()
            .solve_lower_triangular(&DMatrix::identity(b, b))
            .expect("Cholesky factor has a nonzero diagonal")
    }

    /// `y = L⁻¹b`.
    pub fn forward(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let b = self.block_size();
        let mut y = DVector::zeros(rhs.len());
        for i in 0..self.diag.len() {
            let mut v: DVector<f64> = rhs.rows(i * b, b).into_owned();
            if i > 0 {
                v -= &self.lower[i - 1] * y.rows((i - 1) * b, b);
            }
            y.rows_mut(i * b, b).copy_from(&self.diag[i].whiten(&v));
        }
        y
    }

    /// `x = L⁻ᵀy`.
    pub fn backward(&self, y: &DVector<f64>) -> DVector<f64> {
        let b = self.block_size();
        let mut x = DVector::zeros(y.len());
        for i in (0..self.diag.len()).rev() {
            let mut v: DVector<f64> = y.rows(i * b, b).into_owned();
            if i + 1 < self.diag.len() {
                v -= self.lower[i].transpose() * x.rows((i + 1) * b, b);
            }
            x.rows_mut(i * b, b).copy_from(&self.diag[i].colour_inverse(&v));
        }
        x
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.backward(&self.forward(rhs))
    }

    /// Diagonal blocks `Zᵢᵢ` and super-diagonal blocks `Zᵢ,ᵢ₊₁` of the inverse.
    pub fn selected_inverse(&self) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let nb = self.diag.len();
        let l_inv: Vec<DMatrix<f64>> = (0..nb).map(|i| self.l_inv(i)).collect();
        let mut diag = vec![DMatrix::zeros(0, 0); nb];
        let mut upper = vec![DMatrix::zeros(0, 0); nb.saturating_sub(1)];
        diag[nb - 1] = linalg::symmetrize(&(l_inv[nb - 1].transpose() * &l_inv[nb - 1]));
        for i in (0..nb - 1).rev() {
            let w = l_inv[i].transpose() * self.lower[i].transpose();
            let z_up = -&w * &diag[i + 1];
            diag[i] = linalg::symmetrize(&(l_inv[i].transpose() * &l_inv[i] - &z_up * &w.transpose()));
            upper[i] = z_up;
        }
        (diag, upper)
    }

    /// `‖Z‖_F` from every block, `Zᵢⱼ = −Lᵢ⁻ᵀCᵢᵀZᵢ₊₁,ⱼ` for `i < j`.
    pub fn inverse_frobenius(&self) -> f64 {
        let nb = self.diag.len();
        let (diag, _) = self.selected_inverse();
        let ws: Vec<DMatrix<f64>> = (0..nb - 1)
            .map(|i| self.l_inv(i).transpose() * self.lower[i].transpose())
            .collect();
        let total: f64 = (0..nb)
            .into_par_iter()
            .map(|j| {
                let mut block = diag[j].clone();
                let mut sum = block.norm_squared();
                for i in (0..j).rev() {
                    block = -&ws[i] * &block;
                    sum += 2.0 * block.norm_squared();
                }
                sum
            })
            .sum();
        total.sqrt()
    }
}

/// Block-tridiagonal precision of `x⁰..xⁿ` given `z¹..zⁿ`.
pub fn weak_precision(problem: &LinearGaussianProblem, n: usize) -> Result<BlockTridiagonal> {
    let sigma0_inv = linalg::spd_inverse(&problem.sigma0, "Sigma0")?;
    let q_inv = linalg::spd_inverse(&problem.q, "Q")?;
    let (g, _) = data_information(problem)?;
    let a = &problem.a;
    let at_qinv_a = linalg::symmetrize(&(a.transpose() * &q_inv * a));
    let mut diag = Vec::with_capacity(n + 1);
    diag.push(&sigma0_inv + &at_qinv_a);
    for j in 1..=n {
        let mut d = &q_inv + &g;
        if j < n {
            d += &at_qinv_a;
        }
        diag.push(d);
    }
    let off = -(&q_inv * a);
    Ok(BlockTridiagonal { diag, lower: vec![off; n] })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakConstraintPosterior {
    #[serde(skip)]
    pub precision: BlockTridiagonal,
    /// Stacked `(x⁰, …, xⁿ)`.
    #[serde(skip)]
    pub mode: DVector<f64>,
    pub frob_cov: f64,
    /// Set when `frob_cov` covers the diagonal blocks only.
    pub frob_cov_lower_bound: bool,
    /// Marginal covariances of `x⁰..xⁿ`.
    #[serde(skip)]
    pub marginals: Vec<DMatrix<f64>>,
    #[serde(skip)]
    factor: Option<BlockCholesky>,
}

impl WeakConstraintPosterior {
    pub fn state_dim(&self) -> usize {
        self.precision.block_size()
    }

    pub fn trajectory(&self) -> Vec<DVector<f64>> {
        unstack(&self.mode, self.state_dim())
    }
}

fn unstack(x: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    (0..x.len() / m).map(|i| x.rows(i * m, m).into_owned()).collect()
}

fn weak_rhs(problem: &LinearGaussianProblem, observations: &[DVector<f64>]) -> Result<DVector<f64>> {
    let m = problem.state_dim();
    let (_, ht_rinv) = data_information(problem)?;
    let sigma0 = SpdFactor::spd(&problem.sigma0, "Sigma0")?;
    let mut rhs = DVector::zeros((observations.len() + 1) * m);
    rhs.rows_mut(0, m).copy_from(&sigma0.solve_vec(&problem.mu0));
    for (j, z) in observations.iter().enumerate() {
        rhs.rows_mut((j + 1) * m, m).copy_from(&(&ht_rinv * z));
    }
    Ok(rhs)
}

/// Precision, mode, marginals and `‖Σ‖_F` of the weak-constraint posterior.
pub fn weak_posterior(
    problem: &LinearGaussianProblem,
    observations: &[DVector<f64>],
) -> Result<WeakConstraintPosterior> {
    check_observations(problem, observations)?;
    let precision = weak_precision(problem, observations.len())?;
    let factor = precision.cholesky()?;
    let mode = factor.solve(&weak_rhs(problem, observations)?);
    let (marginals, _) = factor.selected_inverse();
    let full = precision.order() <= FULL_INVERSE_LIMIT;
    let frob_cov = if full {
        factor.inverse_frobenius()
    } else {
        marginals.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    };
    Ok(WeakConstraintPosterior {
        precision,
        mode,
        frob_cov,
        frob_cov_lower_bound: !full,
        marginals,
        factor: Some(factor),
    })
}

/// Weak-constraint 4D-Var solution `x⁰..xⁿ`, by block-tridiagonal elimination.
pub fn weak_mode(
    problem: &LinearGaussianProblem,
    observations: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_observations(problem, observations)?;
    let precision = weak_precision(problem, observations.len())?;
    let mode = precision.cholesky()?.solve(&weak_rhs(problem, observations)?);
    Ok(unstack(&mode, problem.state_dim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Strong,
    Weak,
}

/// Exact posterior draws of `x⁰..xⁿ`; every weight is `1/N`.
#[derive(Debug, Clone)]
pub struct SmootherSamples {
    pub constraint: Constraint,
    /// Stacked trajectories `(x⁰, …, xⁿ)`.
    pub samples: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    /// Stacked posterior mode.
    pub mode: DVector<f64>,
}

fn strong_trajectory(problem: &LinearGaussianProblem, x0: DVector<f64>, n: usize) -> DVector<f64> {
    let m = x0.len();
    let mut out = DVector::zeros((n + 1) * m);
    let mut x = x0;
    for j in 0..=n {
        out.rows_mut(j * m, m).copy_from(&x);
        x = &problem.a * x;
    }
    out
}

pub fn optimal_smoother_sample(
    problem: &LinearGaussianProblem,
    observations: &[DVector<f64>],
    n_samples: usize,
    seed: u64,
    constraint: Constraint,
) -> Result<SmootherSamples> {
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let m = problem.state_dim();
    let n = observations.len();
    let draw = |j: usize| {
        let mut rng = rng::stream(seed, 0, j as u64, Purpose::Smoother);
        rng::standard_normal(&mut rng, m * if constraint == Constraint::Weak { n + 1 } else { 1 })
    };
    let (samples, mode) = match constraint {
        Constraint::Strong => {
            let x0 = strong_mode(problem, observations)?;
            let post = strong_precision(problem, n)?;
            let root = linalg::psd_factor(post.covariance.as_matrix(), "strong-constraint covariance", PSD_TOL)?;
            let samples = (0..n_samples)
                .into_par_iter()
                .map(|j| strong_trajectory(problem, &x0 + &root * draw(j), n))
                .collect();
            (samples, strong_trajectory(problem, x0, n))
        }
        Constraint::Weak => {
            let post = weak_posterior(problem, observations)?;
            let factor = post.factor.as_ref().expect("weak posterior keeps its factor");
            let samples = (0..n_samples)
                .into_par_iter()
                .map(|j| &post.mode + factor.backward(&draw(j)))
                .collect();
            (samples, post.mode)
        }
    };
    Ok(SmootherSamples {
        constraint,
        samples,
        weights: vec![1.0 / n_samples as f64; n_samples],
        mode,
    })
}
