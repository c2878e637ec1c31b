use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Steady-state effective dimension and spread statistics.
    Effdim,
    /// DARE lower/upper bounds and the effective-dimension upper bound.
    Bounds,
    /// Balance-function map and level sets.
    Map,
    /// Max state dimension against the noise ratio.
    Maxdim,
    /// Seeded particle-filter runs with per-step diagnostics.
    Filter,
    /// 4D-Var mode and smoothing posterior summaries.
    Smooth,
    /// Collapse fraction over an ε or m sweep.
    CollapseSweep,
    /// Simulate a trajectory.
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Effdim => "effdim",
            Self::Bounds => "bounds",
            Self::Map => "map",
            Self::Maxdim => "maxdim",
            Self::Filter => "filter",
            Self::Smooth => "smooth",
            Self::CollapseSweep => "collapse-sweep",
            Self::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Feasibility,
    Optimal,
    Sir,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Noise ratio `q/r` at fixed `m` and `r`.
    Eps,
    /// State dimension at fixed `q` and `r`.
    M,
}

/// `7`, `1,2,5` or a half-open range `0..20`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |e: std::num::ParseIntError| format!("invalid seed list `{s}`: {e}");
        if let Some((lo, hi)) = s.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(bad)?;
            let hi: u64 = hi.trim().parse().map_err(bad)?;
            if hi <= lo {
                return Err(format!("empty seed range `{s}`"));
            }
            return Ok(Self((lo..hi).collect()));
        }
        let seeds = s
            .split(',')
            .map(|t| t.trim().parse::<u64>().map_err(bad))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self(seeds))
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "effdim", version, about = "Feasibility of linear-Gaussian data assimilation")]
pub struct Args {
    #[arg(long, value_enum)]
    pub command: Command,

    /// Problem JSON with keys A, Q, H, R, mu0, Sigma0.
    #[arg(long, conflicts_with_all = ["m", "q"])]
    pub problem: Option<PathBuf>,
    /// Inline isotropic problem: state dimension.
    #[arg(long)]
    pub m: Option<usize>,
    /// Inline isotropic problem: model-noise variance.
    #[arg(long)]
    pub q: Option<f64>,
    /// Inline isotropic problem: data-noise variance.
    #[arg(long)]
    pub r: Option<f64>,
    /// Inline isotropic problem: prior variance; defaults to the steady posterior variance.
    #[arg(long)]
    pub sigma0: Option<f64>,

    #[arg(long, default_value_t = 1e-4)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000])]
    pub dims: Vec<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,

    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long)]
    pub seeds: Option<Seeds>,
    /// Resample after every k-th step; 0 disables resampling.
    #[arg(long, default_value_t = 1)]
    pub resample_every: usize,
    /// Trajectory JSON (truth, observations, seed) to filter or smooth instead of simulating.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = SweepParam::Eps)]
    pub sweep: SweepParam,
    /// Sweep values (ε or m).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,

    #[arg(long, default_value_t = effdim_core::kalman::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = effdim_core::kalman::DEFAULT_MAX_ITER)]
    pub max_iter: usize,

    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, default_value_t = 0.5)]
    pub collapse_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub balance_constant: f64,
}
