//! Feasibility analysis for linear-Gaussian data assimilation.
//!
//! The effective dimension `‖P‖_F` of the steady-state posterior covariance
//! decides whether assimilation is possible at all; per-algorithm balance
//! conditions and seeded Monte Carlo filters show when particle filters,
//! smoothers and 4D-Var work.

pub mod balance;
pub mod bounds;
pub mod error;
pub mod export;
pub mod filters;
pub mod fixtures;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod smoothing;

pub use balance::{
    balance_function, build_map, general_sufficient_conditions, max_dim_curve, max_dimension,
    BalanceKind, BalanceMap, LevelSet, MaxDimCurve, SufficientConditions,
};
pub use bounds::{dare_lower_bound, dare_upper_bound, p_upper_bound, DareBounds};
pub use error::{Error, Result};
pub use filters::{
    collapse_stat, diagnostics, median, optimal_step, resample, run_filter, run_filter_on, simulate,
    sir_step, CollapseReport, FilterConfig, FilterKind, FilterRun, ParticleEnsemble,
    TrajectoryData,
};
pub use kalman::{
    effective_dimension, isotropic_steady_p, kalman_cov_step, kalman_filter, solve_dare,
    spread_stats, SpreadStats, SteadyState,
};
pub use model::{
    frobenius, psd_compare, validate, LinearGaussianProblem, PsdOrder, PsdVerdict, SymMatrix,
    ValidationReport,
};
pub use smoothing::{
    g_strong, optimal_smoother_sample, sir_smoother_log_weight, strong_balance_map,
    strong_precision, weak_mode, weak_posterior, weak_precision, Constraint,
    StrongConstraintPosterior, WeakConstraintPosterior,
};
