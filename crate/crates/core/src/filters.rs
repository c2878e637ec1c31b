//! Seeded SIR and optimal particle filters, weight-collapse diagnostics and
//! the theoretical collapse statistic `‖Σ‖_F`.
//!
//! All weight arithmetic is done on log-weights; constants common to every
//! particle are dropped before normalization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::kalman::solve_dare_default;
use crate::linalg::{self, SpdFactor};
use crate::model::{frobenius_norm, LinearGaussianProblem, SymMatrix, PSD_TOL};
use crate::rng::{self, Purpose};

/// Max normalized weight above which an ensemble counts as collapsed.
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Sir,
    Optimal,
}

/// `log Σ exp(xᵢ)`, `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Particles `Xⱼ` and log-weights at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub step: usize,
    pub positions: Vec<DVector<f64>>,
    pub log_weights: Vec<f64>,
    pub normalized: bool,
}

impl ParticleEnsemble {
    /// Equally weighted ensemble.
    pub fn uniform(step: usize, positions: Vec<DVector<f64>>) -> Self {
        let lw = -(positions.len() as f64).ln();
        Self {
            step,
            log_weights: vec![lw; positions.len()],
            positions,
            normalized: true,
        }
    }

    /// `N` draws from `N(mean, cov)` as an equally weighted ensemble at step 0.
    pub fn from_gaussian(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("ensemble needs at least one particle".into()));
        }
        let factor = linalg::psd_factor(cov, "Sigma0", PSD_TOL)?;
        let positions = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = rng::stream(seed, 0, j as u64, Purpose::Init);
                mean + &factor * rng::standard_normal(&mut rng, mean.len())
            })
            .collect();
        Ok(Self::uniform(0, positions))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Shift log-weights so that `Σ exp = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        let total = log_sum_exp(&self.log_weights);
        if !total.is_finite() {
            return Err(Error::MeasureZero);
        }
        for lw in &mut self.log_weights {
            *lw -= total;
        }
        self.normalized = true;
        Ok(())
    }

    /// Normalized weights `Ŵⱼ`, without modifying the ensemble.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let total = log_sum_exp(&self.log_weights);
        if !total.is_finite() {
            return Err(Error::MeasureZero);
        }
        Ok(self.log_weights.iter().map(|lw| (lw - total).exp()).collect())
    }

    /// `Σ Ŵⱼ Xⱼ` and `Σ Ŵⱼ ‖Xⱼ − mean‖²`.
    pub fn weighted_moments(&self) -> Result<(DVector<f64>, f64)> {
        let w = self.normalized_weights()?;
        let m = self.positions.first().map_or(0, |x| x.len());
        let mut mean = DVector::zeros(m);
        for (x, wj) in self.positions.iter().zip(&w) {
            mean.axpy(*wj, x, 1.0);
        }
        let spread = self
            .positions
            .iter()
            .zip(&w)
            .map(|(x, wj)| wj * (x - &mean).norm_squared())
            .sum();
        Ok((mean, spread))
    }
}

/// A realization `x⁰..xⁿ`, `z¹..zⁿ` of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    #[serde(with = "vectors")]
    pub truth: Vec<DVector<f64>>,
    #[serde(with = "vectors")]
    pub observations: Vec<DVector<f64>>,
    pub seed: u64,
}

mod vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

impl TrajectoryData {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(e.to_string()))
    }

    pub fn check_dims(&self, problem: &LinearGaussianProblem) -> Result<()> {
        let (m, k) = (problem.state_dim(), problem.data_dim());
        if let Some(i) = self.truth.iter().position(|x| x.len() != m) {
            return Err(Error::Dimension(format!("truth[{i}] has length ≠ {m}")));
        }
        if let Some(i) = self.observations.iter().position(|z| z.len() != k) {
            return Err(Error::Dimension(format!("observations[{i}] has length ≠ {k}")));
        }
        Ok(())
    }
}

fn ensure_valid(problem: &LinearGaussianProblem) -> Result<()> {
    let report = problem.validate();
    if report.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidProblem(report.issues))
    }
}

/// Draw `x⁰ ~ N(μ₀, Σ₀)` and run the model and data equations for `n_steps`.
pub fn simulate(
    problem: &LinearGaussianProblem,
    n_steps: usize,
    seed: u64,
) -> Result<TrajectoryData> {
    if n_steps == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    ensure_valid(problem)?;
    let (m, k) = (problem.state_dim(), problem.data_dim());
    let l0 = linalg::psd_factor(&problem.sigma0, "Sigma0", PSD_TOL)?;
    let lq = linalg::psd_factor(&problem.q, "Q", PSD_TOL)?;
    let lr = linalg::psd_factor(&problem.r, "R", PSD_TOL)?;

    let mut rng = rng::stream(seed, 0, 0, Purpose::Truth);
    let mut x = &problem.mu0 + &l0 * rng::standard_normal(&mut rng, m);
    let mut truth = Vec::with_capacity(n_steps + 1);
    let mut observations = Vec::with_capacity(n_steps);
    truth.push(x.clone());
    for _ in 0..n_steps {
        x = &problem.a * &x + &lq * rng::standard_normal(&mut rng, m);
        let z = &problem.h * &x + &lr * rng::standard_normal(&mut rng, k);
        truth.push(x.clone());
        observations.push(z);
    }
    Ok(TrajectoryData { truth, observations, seed })
}

/// SIR kernel: propagate with the model, weight by `p(z | Xⱼⁿ⁺¹)`.
#[derive(Debug, Clone)]
pub struct SirKernel {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: SpdFactor,
}

impl SirKernel {
    pub fn new(problem: &LinearGaussianProblem) -> Result<Self> {
        Ok(Self {
            a: problem.a.clone(),
            h: problem.h.clone(),
            q_factor: linalg::psd_factor(&problem.q, "Q", PSD_TOL)?,
            r_factor: SpdFactor::spd(&problem.r, "R")?,
        })
    }

    /// `log N(z; Hx, R)` up to a constant.
    pub fn log_likelihood(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        -0.5 * self.r_factor.inv_quad(&(z - &self.h * x))
    }

    pub fn step(
        &self,
        ensemble: &ParticleEnsemble,
        z: &DVector<f64>,
        seed: u64,
    ) -> Result<ParticleEnsemble> {
        check_observation(z, self.h.nrows())?;
        let step = ensemble.step + 1;
        let m = self.a.nrows();
        let (positions, log_weights) = ensemble
            .positions
            .par_iter()
            .zip(&ensemble.log_weights)
            .enumerate()
            .map(|(j, (x, lw))| {
                let mut rng = rng::stream(seed, step as u64, j as u64, Purpose::Propagate);
                let next = &self.a * x + &self.q_factor * rng::standard_normal(&mut rng, m);
                let inc = self.log_likelihood(&next, z);
                (next, lw + inc)
            })
            .unzip();
        Ok(ParticleEnsemble { step, positions, log_weights, normalized: false })
    }
}

/// How the proposal moments were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimalForm {
    /// `Σₒ = (Q⁻¹ + HᵀR⁻¹H)⁻¹`, `μⱼ = Σₒ(Q⁻¹AXⱼ + HᵀR⁻¹z)`.
    Information,
    /// `K = QHᵀ(HQHᵀ+R)⁻¹`, `Σₒ = Q − KHQ`, `μⱼ = AXⱼ + K(z − HAXⱼ)`; needs no `Q⁻¹`.
    Innovation,
}

/// Optimal kernel: sample `p(xⁿ⁺¹ | Xⱼⁿ, z)`, weight by `p(z | Xⱼⁿ)`.
///
/// Either form gives `μⱼ = M Xⱼ + N z`; only `M` and `N` are kept.
#[derive(Debug, Clone)]
pub struct OptimalKernel {
    form: OptimalForm,
    state_map: DMatrix<f64>,
    data_map: DMatrix<f64>,
    ha: DMatrix<f64>,
    /// Factor of the proposal covariance `Σₒ`.
    proposal_factor: DMatrix<f64>,
    /// Factor of `HQHᵀ + R`.
    innovation: SpdFactor,
}

impl OptimalKernel {
    /// Uses the information form for positive definite `Q`, the innovation form otherwise.
    pub fn new(problem: &LinearGaussianProblem) -> Result<Self> {
        match SpdFactor::spd(&problem.q, "Q") {
            Ok(q_factor) => Self::information_form(problem, &q_factor),
            Err(_) => Self::innovation_form(problem),
        }
    }

    fn information_form(problem: &LinearGaussianProblem, q_factor: &SpdFactor) -> Result<Self> {
        let h = &problem.h;
        let s = linalg::symmetrize(&(h * &problem.q * h.transpose() + &problem.r));
        let innovation = SpdFactor::spd(&s, "H Q Hᵀ + R")?;
        let r_inv = linalg::spd_inverse(&problem.r, "R")?;
        let q_inv = q_factor.inverse();
        let info = linalg::symmetrize(&(&q_inv + h.transpose() * &r_inv * h));
        let sigma_o = SpdFactor::spd(&info, "Q⁻¹ + HᵀR⁻¹H")?.inverse();
        Ok(Self {
            form: OptimalForm::Information,
            state_map: &sigma_o * &q_inv * &problem.a,
            data_map: &sigma_o * h.transpose() * &r_inv,
            ha: h * &problem.a,
            proposal_factor: linalg::psd_factor(&sigma_o, "proposal covariance", PSD_TOL)?,
            innovation,
        })
    }

    /// Innovation form regardless of `Q`.
    pub fn innovation_form(problem: &LinearGaussianProblem) -> Result<Self> {
        let h = &problem.h;
        let hq = h * &problem.q;
        let s = linalg::symmetrize(&(&hq * h.transpose() + &problem.r));
        let innovation = SpdFactor::spd(&s, "H Q Hᵀ + R")?;
        let gain = innovation.solve(&hq).transpose();
        let cov = linalg::symmetrize(&(&problem.q - &gain * &hq));
        let ha = h * &problem.a;
        Ok(Self {
            form: OptimalForm::Innovation,
            state_map: &problem.a - &gain * &ha,
            data_map: gain,
            ha,
            proposal_factor: linalg::psd_factor(&cov, "proposal covariance", PSD_TOL)?,
            innovation,
        })
    }

    pub fn form(&self) -> OptimalForm {
        self.form
    }

    /// `log N(z; HAx, HQHᵀ + R)` up to a constant; a function of `Xⱼⁿ` only.
    pub fn log_weight(&self, x_prev: &DVector<f64>, z: &DVector<f64>) -> f64 {
        -0.5 * self.innovation.inv_quad(&(z - &self.ha * x_prev))
    }

    /// Proposal mean `μⱼ` for a particle at `x_prev`.
    pub fn proposal_mean(&self, x_prev: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x_prev + &self.data_map * z
    }

    /// Proposal covariance `Σₒ`.
    pub fn proposal_covariance(&self) -> DMatrix<f64> {
        &self.proposal_factor * self.proposal_factor.transpose()
    }

    pub fn step(
        &self,
        ensemble: &ParticleEnsemble,
        z: &DVector<f64>,
        seed: u64,
    ) -> Result<ParticleEnsemble> {
        check_observation(z, self.ha.nrows())?;
        let step = ensemble.step + 1;
        let m = self.state_map.nrows();
        let offset = &self.data_map * z;
        let (positions, log_weights) = ensemble
            .positions
            .par_iter()
            .zip(&ensemble.log_weights)
            .enumerate()
            .map(|(j, (x, lw))| {
                let mut rng = rng::stream(seed, step as u64, j as u64, Purpose::Propagate);
                let mut next = &self.state_map * x + &offset;
                next.gemv(1.0, &self.proposal_factor, &rng::standard_normal(&mut rng, m), 1.0);
                (next, lw + self.log_weight(x, z))
            })
            .unzip();
        Ok(ParticleEnsemble { step, positions, log_weights, normalized: false })
    }
}

fn check_observation(z: &DVector<f64>, k: usize) -> Result<()> {
    if z.len() != k {
        return Err(Error::Dimension(format!("observation has length {}, expected {k}", z.len())));
    }
    Ok(())
}

/// Either filter's transition kernel.
#[derive(Debug, Clone)]
pub enum FilterKernel {
    Sir(SirKernel),
    Optimal(OptimalKernel),
}

impl FilterKernel {
    pub fn new(problem: &LinearGaussianProblem, kind: FilterKind) -> Result<Self> {
        Ok(match kind {
            FilterKind::Sir => Self::Sir(SirKernel::new(problem)?),
            FilterKind::Optimal => Self::Optimal(OptimalKernel::new(problem)?),
        })
    }

    pub fn step(
        &self,
        ensemble: &ParticleEnsemble,
        z: &DVector<f64>,
        seed: u64,
    ) -> Result<ParticleEnsemble> {
        match self {
            Self::Sir(k) => k.step(ensemble, z, seed),
            Self::Optimal(k) => k.step(ensemble, z, seed),
        }
    }
}

/// One SIR step; returns the unnormalized ensemble at `n + 1`.
pub fn sir_step(
    problem: &LinearGaussianProblem,
    ensemble: &ParticleEnsemble,
    z: &DVector<f64>,
    seed: u64,
) -> Result<ParticleEnsemble> {
    SirKernel::new(problem)?.step(ensemble, z, seed)
}

/// One optimal-filter step; returns the unnormalized ensemble at `n + 1`.
pub fn optimal_step(
    problem: &LinearGaussianProblem,
    ensemble: &ParticleEnsemble,
    z: &DVector<f64>,
    seed: u64,
) -> Result<ParticleEnsemble> {
    OptimalKernel::new(problem)?.step(ensemble, z, seed)
}

/// Systematic resampling indices for weights summing to one, offset `u ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], n_out: usize, u: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n_out);
    let mut cumulative = 0.0;
    let mut j = 0;
    let last = weights.len() - 1;
    for i in 0..n_out {
        let target = (i as f64 + u) / n_out as f64 * total;
        while j < last && cumulative + weights[j] <= target {
            cumulative += weights[j];
            j += 1;
        }
        out.push(j);
    }
    out
}

/// Systematic resampling to `n_out` equally weighted particles.
pub fn resample_to(
    ensemble: &ParticleEnsemble,
    n_out: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let weights = ensemble.normalized_weights()?;
    if n_out == 0 {
        return Err(Error::Domain("cannot resample to zero particles".into()));
    }
    let u: f64 = rng::stream(seed, ensemble.step as u64, 0, Purpose::Resample).random();
    let positions = systematic_indices(&weights, n_out, u)
        .into_iter()
        .map(|j| ensemble.positions[j].clone())
        .collect();
    Ok(ParticleEnsemble::uniform(ensemble.step, positions))
}

/// Systematic resampling keeping the ensemble size.
pub fn resample(ensemble: &ParticleEnsemble, seed: u64) -> Result<ParticleEnsemble> {
    resample_to(ensemble, ensemble.len(), seed)
}

/// Collapse diagnostics of one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseReport {
    /// `1/ΣŴⱼ²`.
    pub ess: f64,
    pub max_weight: f64,
    /// Sample variance of the log-weights.
    pub var_log_w: f64,
    /// Theoretical `‖Σ‖_F` at steady state, when known.
    pub sigma_frob: Option<f64>,
    pub kind: Option<FilterKind>,
}

impl CollapseReport {
    pub fn with_theory(self, kind: FilterKind, sigma_frob: Option<f64>) -> Self {
        Self { kind: Some(kind), sigma_frob, ..self }
    }

    pub fn collapsed(&self, threshold: f64) -> bool {
        self.max_weight > threshold
    }
}

pub fn diagnostics(ensemble: &ParticleEnsemble) -> Result<CollapseReport> {
    let w = ensemble.normalized_weights()?;
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let max_weight = w.iter().copied().fold(0.0, f64::max);
    let finite: Vec<f64> = ensemble.log_weights.iter().copied().filter(|x| x.is_finite()).collect();
    let var_log_w = if finite.len() < 2 {
        0.0
    } else {
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        finite.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (finite.len() - 1) as f64
    };
    Ok(CollapseReport {
        ess: ess.min(ensemble.len() as f64),
        max_weight,
        var_log_w,
        sigma_frob: None,
        kind: None,
    })
}

/// `‖Σ‖_F` with `Σ = HAPAᵀHᵀ(HQHᵀ+R)⁻¹` (optimal) or `Σ = H(Q + APAᵀ)HᵀR⁻¹` (SIR).
pub fn collapse_stat(
    problem: &LinearGaussianProblem,
    p: &SymMatrix,
    kind: FilterKind,
) -> Result<f64> {
    let (a, h) = (&problem.a, &problem.h);
    if p.order() != problem.state_dim() {
        return Err(Error::Dimension("P does not match the state dimension".into()));
    }
    let apa = a * p.as_matrix() * a.transpose();
    let sigma = match kind {
        FilterKind::Optimal => {
            let s = linalg::symmetrize(&(h * &problem.q * h.transpose() + &problem.r));
            let s_inv = linalg::spd_inverse(&s, "H Q Hᵀ + R")?;
            h * apa * h.transpose() * s_inv
        }
        FilterKind::Sir => {
            let r_inv = linalg::spd_inverse(&problem.r, "R")?;
            h * (&problem.q + apa) * h.transpose() * r_inv
        }
    };
    Ok(frobenius_norm(&sigma))
}

/// Parameters of one seeded filtering run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub n_steps: usize,
    pub particles: usize,
    pub seed: u64,
    /// Resample after every `resample_every` steps; 0 disables resampling.
    pub resample_every: usize,
}

impl FilterConfig {
    pub fn new(kind: FilterKind, n_steps: usize, particles: usize, seed: u64) -> Self {
        Self { kind, n_steps, particles, seed, resample_every: 1 }
    }
}

/// Diagnostics after the weighting of step `step`, before resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub ess: f64,
    pub max_weight: f64,
    pub var_log_w: f64,
    /// `‖filter mean − truth‖`.
    pub mean_error_norm: f64,
    /// `Σ Ŵⱼ ‖Xⱼ − mean‖²`, the trace of the weighted ensemble covariance.
    pub posterior_trace: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterRun {
    pub config: FilterConfig,
    pub sigma_frob: Option<f64>,
    pub reports: Vec<StepReport>,
    #[serde(skip)]
    pub means: Vec<DVector<f64>>,
    /// Step at which every weight underflowed, ending the run.
    pub measure_zero_at: Option<usize>,
}

impl FilterRun {
    pub fn max_weight(&self) -> f64 {
        self.reports.iter().map(|r| r.max_weight).fold(0.0, f64::max)
    }

    /// First step whose max weight exceeds `threshold`.
    pub fn first_collapse(&self, threshold: f64) -> Option<usize> {
        if let Some(step) = self.measure_zero_at {
            return Some(step);
        }
        self.reports.iter().find(|r| r.max_weight > threshold).map(|r| r.step)
    }

    pub fn median_ess(&self) -> f64 {
        let mut ess: Vec<f64> = self.reports.iter().map(|r| r.ess).collect();
        median(&mut ess)
    }

    pub const CSV_HEADER: &'static str = "seed,step,ess,max_weight,var_log_w,mean_error_norm";

    /// Per-step rows without header.
    pub fn csv_rows(&self) -> String {
        self.reports
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}\n",
                    self.config.seed,
                    r.step,
                    export::float(r.ess),
                    export::float(r.max_weight),
                    export::float(r.var_log_w),
                    export::float(r.mean_error_norm)
                )
            })
            .collect()
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Simulate a trajectory from `config.seed` and filter it.
pub fn run_filter(problem: &LinearGaussianProblem, config: &FilterConfig) -> Result<FilterRun> {
    let trajectory = simulate(problem, config.n_steps, config.seed)?;
    run_filter_on(problem, &trajectory, config)
}

/// Filter a given trajectory; particles start from `N(μ₀, Σ₀)`.
pub fn run_filter_on(
    problem: &LinearGaussianProblem,
    trajectory: &TrajectoryData,
    config: &FilterConfig,
) -> Result<FilterRun> {
    if config.particles < 2 {
        return Err(Error::Domain("particle filter needs N ≥ 2".into()));
    }
    ensure_valid(problem)?;
    trajectory.check_dims(problem)?;
    let n_steps = config.n_steps.min(trajectory.observations.len());
    let kernel = FilterKernel::new(problem, config.kind)?;
    let sigma_frob = solve_dare_default(problem)
        .ok()
        .and_then(|ss| collapse_stat(problem, &ss.p, config.kind).ok());

    let mut ensemble =
        ParticleEnsemble::from_gaussian(&problem.mu0, &problem.sigma0, config.particles, config.seed)?;
    let mut reports = Vec::with_capacity(n_steps);
    let mut means = Vec::with_capacity(n_steps);
    let mut measure_zero_at = None;
    for n in 1..=n_steps {
        let z = &trajectory.observations[n - 1];
        let weighted = kernel.step(&ensemble, z, config.seed)?;
        let report = match diagnostics(&weighted) {
            Ok(r) => r,
            Err(Error::MeasureZero) => {
                measure_zero_at = Some(n);
                break;
            }
            Err(e) => return Err(e),
        };
        let (mean, posterior_trace) = weighted.weighted_moments()?;
        reports.push(StepReport {
            step: n,
            ess: report.ess,
            max_weight: report.max_weight,
            var_log_w: report.var_log_w,
            mean_error_norm: (&mean - &trajectory.truth[n]).norm(),
            posterior_trace,
        });
        means.push(mean);
        let mut weighted = weighted;
        weighted.normalize()?;
        ensemble = if config.resample_every > 0 && n % config.resample_every == 0 {
            resample(&weighted, config.seed)?
        } else {
            weighted
        };
    }
    Ok(FilterRun { config: *config, sigma_frob, reports, means, measure_zero_at })
}
