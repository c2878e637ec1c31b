//! Balance-condition functions of the isotropic problem and their level sets.
//!
//! Each `g(q, r)` is the per-component size of a covariance (the effective
//! dimension, or a filter's collapse statistic) divided by `√m`; a
//! problem of dimension `m` is in the good region when `g ≤ c/√m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::filters::FilterKind;
use crate::kalman::{isotropic_steady_p, solve_dare_default};
use crate::model::{frobenius_norm, LinearGaussianProblem};
use crate::smoothing::g_strong;

/// Right-hand-side constant of `g ≤ c/√m`.
pub const DEFAULT_BALANCE_CONSTANT: f64 = 1.0;
pub const DEFAULT_GRID_MIN: f64 = 1e-4;
pub const DEFAULT_GRID_MAX: f64 = 1e2;
pub const DEFAULT_GRID_POINTS: usize = 200;
/// Contract on every extracted level-set point: `|g − c/√m| ≤ LEVEL_SET_TOL`.
pub const LEVEL_SET_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceKind {
    Feasibility,
    OptimalFilter,
    SirFilter,
    /// Strong-constraint smoothing; the first axis is `σ₀` instead of `q`.
    StrongConstraint,
}

impl From<FilterKind> for BalanceKind {
    fn from(kind: FilterKind) -> Self {
        match kind {
            FilterKind::Optimal => Self::OptimalFilter,
            FilterKind::Sir => Self::SirFilter,
        }
    }
}

fn check_domain(q: f64, r: f64) -> Result<()> {
    if !(q >= 0.0) || !q.is_finite() || !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("need q ≥ 0 and r > 0, got q={q}, r={r}")));
    }
    Ok(())
}

/// `(√(q²+4qr) − q)/2`, the per-component steady posterior variance.
pub fn g_feasibility(q: f64, r: f64) -> Result<f64> {
    isotropic_steady_p(q, r)
}

/// `(√(q²+4qr) − q)/(2(q+r))`; depends on `q/r` only.
pub fn g_optimal(q: f64, r: f64) -> Result<f64> {
    Ok(g_feasibility(q, r)? / (q + r))
}

/// `(√(q²+4qr) + q)/(2r)`; depends on `q/r` only.
pub fn g_sir(q: f64, r: f64) -> Result<f64> {
    check_domain(q, r)?;
    Ok(((q * q + 4.0 * q * r).sqrt() + q) / (2.0 * r))
}

pub fn balance_function(kind: BalanceKind, x: f64, r: f64) -> Result<f64> {
    match kind {
        BalanceKind::Feasibility => g_feasibility(x, r),
        BalanceKind::OptimalFilter => g_optimal(x, r),
        BalanceKind::SirFilter => g_sir(x, r),
        BalanceKind::StrongConstraint => g_strong(x, r),
    }
}

/// Largest `m` with `g(ε, 1) ≤ 1/√m`, i.e. `1/g(ε, 1)²`.
pub fn max_dimension(eps: f64, kind: FilterKind) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("ε must be positive, got {eps}")));
    }
    let g = balance_function(kind.into(), eps, 1.0)?;
    Ok(1.0 / (g * g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxDimCurve {
    pub kind: FilterKind,
    pub eps_grid: Vec<f64>,
    pub m_max: Vec<f64>,
}

pub fn max_dim_curve(kind: FilterKind, eps_grid: &[f64]) -> Result<MaxDimCurve> {
    if eps_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let m_max = eps_grid.iter().map(|&e| max_dimension(e, kind)).collect::<Result<_>>()?;
    Ok(MaxDimCurve { kind, eps_grid: eps_grid.to_vec(), m_max })
}

impl MaxDimCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,m_max\n");
        for (e, m) in self.eps_grid.iter().zip(&self.m_max) {
            out.push_str(&format!("{},{}\n", export::float(*e), export::float(*m)));
        }
        out
    }
}

/// Points `(x, r)` with `g(x, r) = c/√m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSet {
    pub m: usize,
    pub level: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceMap {
    pub kind: BalanceKind,
    pub q_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    /// `values[i][j] = g(q_grid[i], r_grid[j])`.
    pub values: Vec<Vec<f64>>,
    pub level_sets: Vec<LevelSet>,
    pub constant: f64,
}

impl BalanceMap {
    /// Grid values as CSV with columns `q, r, g`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,r,g\n");
        for (q, row) in self.q_grid.iter().zip(&self.values) {
            for (r, g) in self.r_grid.iter().zip(row) {
                out.push_str(&format!(
                    "{},{},{}\n",
                    export::float(*q),
                    export::float(*r),
                    export::float(*g)
                ));
            }
        }
        out
    }

    /// Level-set polylines as CSV with columns `set, m, level, q, r`.
    pub fn level_sets_csv(&self) -> String {
        let mut out = String::from("set,m,level,q,r\n");
        for (i, set) in self.level_sets.iter().enumerate() {
            for (q, r) in &set.points {
                out.push_str(&format!(
                    "{i},{},{},{},{}\n",
                    set.m,
                    export::float(set.level),
                    export::float(*q),
                    export::float(*r)
                ));
            }
        }
        out
    }
}

/// `n` log-spaced points over `[min, max]`.
pub fn log_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyGrid);
    }
    if !(min > 0.0) || !(max >= min) || !max.is_finite() {
        return Err(Error::Domain(format!("grid needs 0 < min ≤ max, got [{min}, {max}]")));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.ln(), max.ln());
    Ok((0..n)
        .map(|i| match i {
            0 => min,
            _ if i == n - 1 => max,
            _ => (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Bisection in log-space for `f(x) = target` on a bracket where `f` is monotone.
fn log_bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    let rising = f(hi) >= f(lo);
    for _ in 0..200 {
        let mid = (lo.ln() * 0.5 + hi.ln() * 0.5).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < target) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(lo) - target).abs() <= (f(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

/// For each `x` in the grid, the `r` where the (increasing in `r`) function crosses `level`.
fn column_level_set(
    g: impl Fn(f64, f64) -> f64,
    x_grid: &[f64],
    r_grid: &[f64],
    level: f64,
) -> Vec<(f64, f64)> {
    let (r_min, r_max) = (r_grid[0], r_grid[r_grid.len() - 1]);
    x_grid
        .iter()
        .filter_map(|&x| {
            let column = |r: f64| g(x, r);
            if column(r_min) > level || column(r_max) < level {
                return None;
            }
            let j = r_grid.windows(2).position(|w| column(w[1]) >= level);
            let (lo, hi) = match j {
                Some(j) => (r_grid[j], r_grid[j + 1]),
                None => (r_min, r_min),
            };
            let r = if column(lo) == level { lo } else { log_bisect(column, lo, hi, level) };
            ((column(r) - level).abs() <= LEVEL_SET_TOL).then_some((x, r))
        })
        .collect()
}

/// Rays `r = q/ε` through the origin where `g(ε, 1) = level`.
fn ray_level_sets(
    g: impl Fn(f64, f64) -> f64,
    q_grid: &[f64],
    r_grid: &[f64],
    level: f64,
) -> Vec<Vec<(f64, f64)>> {
    let (q_min, q_max) = (q_grid[0], q_grid[q_grid.len() - 1]);
    let (r_min, r_max) = (r_grid[0], r_grid[r_grid.len() - 1]);
    let ratio = |eps: f64| g(eps, 1.0);
    let scan = log_grid(q_min / r_max, q_max / r_min, 4096).unwrap_or_default();
    let mut roots = Vec::new();
    for w in scan.windows(2) {
        let (a, b) = (ratio(w[0]) - level, ratio(w[1]) - level);
        if a == 0.0 {
            roots.push(w[0]);
        } else if a * b < 0.0 {
            roots.push(log_bisect(ratio, w[0], w[1], level));
        }
    }
    if let Some(&last) = scan.last() {
        if ratio(last) == level {
            roots.push(last);
        }
    }
    roots
        .into_iter()
        .map(|eps| {
            q_grid
                .iter()
                .map(|&q| (q, q / eps))
                .filter(|&(q, r)| {
                    (r_min..=r_max).contains(&r) && (g(q, r) - level).abs() <= LEVEL_SET_TOL
                })
                .collect::<Vec<_>>()
        })
        .filter(|pts| !pts.is_empty())
        .collect()
}

/// Evaluate `g` on the grid and extract the level sets `g = c/√m` for each `m`.
pub fn build_map(
    kind: BalanceKind,
    q_grid: &[f64],
    r_grid: &[f64],
    dims: &[usize],
    constant: f64,
) -> Result<BalanceMap> {
    check_grid(q_grid)?;
    check_grid(r_grid)?;
    if !(constant > 0.0) {
        return Err(Error::Domain(format!("balance constant must be positive, got {constant}")));
    }
    if dims.contains(&0) {
        return Err(Error::Domain("dimensions must be positive".into()));
    }
    let values = q_grid
        .iter()
        .map(|&q| r_grid.iter().map(|&r| balance_function(kind, q, r)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;

    // Domain already checked, so evaluation cannot fail from here on.
    let g = |x: f64, r: f64| balance_function(kind, x, r).unwrap_or(f64::NAN);
    let mut level_sets = Vec::new();
    for &m in dims {
        let level = constant / (m as f64).sqrt();
        match kind {
            BalanceKind::Feasibility | BalanceKind::StrongConstraint => {
                level_sets.push(LevelSet {
                    m,
                    level,
                    points: column_level_set(g, q_grid, r_grid, level),
                });
            }
            BalanceKind::OptimalFilter | BalanceKind::SirFilter => {
                for points in ray_level_sets(g, q_grid, r_grid, level) {
                    level_sets.push(LevelSet { m, level, points });
                }
            }
        }
    }
    Ok(BalanceMap {
        kind,
        q_grid: q_grid.to_vec(),
        r_grid: r_grid.to_vec(),
        values,
        level_sets,
        constant,
    })
}

/// One side-by-side inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs }
    }
}

/// Sufficient conditions for a general problem, with `‖·‖` the Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficientConditions {
    /// `‖A‖²‖H‖²‖P‖ ≤ ‖H‖²‖Q‖ + ‖R‖`.
    pub optimal: Inequality,
    /// `‖H‖²(‖Q‖ + ‖A‖²‖P‖) ≤ ‖R‖`.
    pub sir: Inequality,
    /// `‖P‖ ≤ c`.
    pub feasibility: Inequality,
}

pub fn general_sufficient_conditions(
    problem: &LinearGaussianProblem,
    constant: f64,
) -> Result<SufficientConditions> {
    let steady = solve_dare_default(problem)?;
    let a2 = frobenius_norm(&problem.a).powi(2);
    let h2 = frobenius_norm(&problem.h).powi(2);
    let q = frobenius_norm(&problem.q);
    let r = frobenius_norm(&problem.r);
    let p = steady.eff_dim;
    Ok(SufficientConditions {
        optimal: Inequality::new(a2 * h2 * p, h2 * q + r),
        sir: Inequality::new(h2 * (q + a2 * p), r),
        feasibility: Inequality::new(p, constant),
    })
}
