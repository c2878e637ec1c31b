use std::path::Path;

use effdim_core::balance::log_grid;
use effdim_core::export::float;
use effdim_core::filters::run_filter_on;
use effdim_core::kalman::dare_residual;
use effdim_core::linalg::SpdFactor;
use effdim_core::smoothing::{sir_smoother_condition, strong_mode, SmootherCondition};
use effdim_core::{
    build_map, general_sufficient_conditions, isotropic_steady_p, max_dim_curve, median,
    p_upper_bound, simulate, solve_dare, spread_stats, strong_balance_map, strong_precision,
    weak_posterior, BalanceKind, Constraint, FilterConfig, FilterKind, FilterRun,
    LinearGaussianProblem, SpreadStats, SufficientConditions, SymMatrix, TrajectoryData,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{Args, Command, Format, Kind, SweepParam};
use crate::{csv_document, json_document, CliError, CliResult, Output};

pub(crate) fn dispatch(args: &Args) -> CliResult<Output> {
    match args.command {
        Command::Effdim => effdim(args),
        Command::Bounds => bounds(args),
        Command::Map => map(args),
        Command::Maxdim => maxdim(args),
        Command::Filter => filter(args),
        Command::Smooth => smooth(args),
        Command::CollapseSweep => collapse_sweep(args),
        Command::Simulate => simulate_cmd(args),
    }
}

fn body_only(body: String) -> Output {
    Output { body, summary: None }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Problem from `--problem`, or the isotropic `--m/--q/--r[/--sigma0]` problem.
fn load_problem(args: &Args) -> CliResult<LinearGaussianProblem> {
    if let Some(path) = &args.problem {
        if args.r.is_some() || args.sigma0.is_some() {
            return Err(input("--r and --sigma0 describe an inline problem and conflict with --problem"));
        }
        return Ok(LinearGaussianProblem::load(path)?);
    }
    let (Some(m), Some(q), Some(r)) = (args.m, args.q, args.r) else {
        return Err(input("need --problem FILE or all of --m, --q, --r"));
    };
    isotropic(m, q, r, args.sigma0)
}

/// Isotropic problem; `Σ₀` defaults to the steady posterior variance.
fn isotropic(m: usize, q: f64, r: f64, sigma0: Option<f64>) -> CliResult<LinearGaussianProblem> {
    let sigma0 = match sigma0 {
        Some(s) => s,
        None => isotropic_steady_p(q, r)?,
    };
    Ok(LinearGaussianProblem::isotropic(m, q, r, sigma0)?)
}

fn seeds(args: &Args) -> CliResult<&[u64]> {
    match &args.seeds {
        Some(s) if !s.0.is_empty() => Ok(&s.0),
        _ => Err(input(format!("{} needs --seeds", args.command.name()))),
    }
}

fn first_seed(args: &Args) -> u64 {
    args.seeds.as_ref().and_then(|s| s.0.first().copied()).unwrap_or(0)
}

fn filter_kind(args: &Args) -> CliResult<FilterKind> {
    match args.kind.unwrap_or(Kind::Optimal) {
        Kind::Optimal => Ok(FilterKind::Optimal),
        Kind::Sir => Ok(FilterKind::Sir),
        other => Err(input(format!("--kind {other:?} is not a particle filter").to_lowercase())),
    }
}

fn threshold(args: &Args) -> CliResult<f64> {
    let t = args.collapse_threshold;
    if !(t > 0.0 && t < 1.0) {
        return Err(input(format!("--collapse-threshold must lie in (0, 1), got {t}")));
    }
    Ok(t)
}

/// Trajectory JSON, either bare or wrapped in a `simulate` output document.
fn load_trajectory(path: &Path) -> CliResult<TrajectoryData> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| input(format!("{}: malformed JSON: {e}", path.display())))?;
    let doc = value.get("result").cloned().unwrap_or(value);
    Ok(TrajectoryData::from_json(&doc.to_string())?)
}

fn trajectory(args: &Args, problem: &LinearGaussianProblem) -> CliResult<TrajectoryData> {
    let t = match &args.trajectory {
        Some(path) => load_trajectory(path)?,
        None => simulate(problem, args.steps, first_seed(args))?,
    };
    t.check_dims(problem)?;
    if t.observations.is_empty() {
        return Err(input("trajectory has no observations"));
    }
    Ok(t)
}

#[derive(Serialize)]
struct EffdimResult {
    eff_dim: f64,
    iterations: usize,
    residual: f64,
    dare_residual: f64,
    spread: SpreadStats,
    p: SymMatrix,
}

fn effdim(args: &Args) -> CliResult<Output> {
    let problem = load_problem(args)?;
    let ss = solve_dare(&problem, args.tol, args.max_iter)?;
    let result = EffdimResult {
        eff_dim: ss.eff_dim,
        iterations: ss.iterations,
        residual: ss.residual,
        dare_residual: dare_residual(&problem, &ss.x)?,
        spread: spread_stats(&ss.p),
        p: ss.p,
    };
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &result),
        Format::Csv => {
            let s = &result.spread;
            let rows = format!(
                "eff_dim,iterations,residual,dare_residual,mean_y,var_y,e_hat,v_hat\n{},{},{},{},{},{},{},{}\n",
                float(result.eff_dim),
                result.iterations,
                float(result.residual),
                float(result.dare_residual),
                float(s.mean_y),
                float(s.var_y),
                float(s.e_hat),
                float(s.v_hat)
            );
            csv_document(args, &[], &rows)
        }
    }))
}

#[derive(Serialize)]
struct BoundsResult {
    eff_dim: f64,
    eff_dim_upper: f64,
    eta: f64,
    q_regularized: bool,
    x_lower: SymMatrix,
    x: SymMatrix,
    x_upper: SymMatrix,
    p: SymMatrix,
    p_upper: SymMatrix,
}

fn bounds(args: &Args) -> CliResult<Output> {
    let problem = load_problem(args)?;
    let ss = solve_dare(&problem, args.tol, args.max_iter)?;
    let b = p_upper_bound(&problem)?;
    let result = BoundsResult {
        eff_dim: ss.eff_dim,
        eff_dim_upper: b.eff_dim_upper,
        eta: b.eta,
        q_regularized: b.q_regularized,
        x_lower: b.x_lower,
        x: ss.x,
        x_upper: b.x_upper,
        p: ss.p,
        p_upper: b.p_upper,
    };
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &result),
        Format::Csv => {
            let rows = format!(
                "eff_dim,eff_dim_upper,eta,q_regularized\n{},{},{},{}\n",
                float(result.eff_dim),
                float(result.eff_dim_upper),
                float(result.eta),
                result.q_regularized
            );
            csv_document(args, &[], &rows)
        }
    }))
}

fn grid(args: &Args) -> CliResult<Vec<f64>> {
    Ok(log_grid(args.grid_min, args.grid_max, args.grid_points)?)
}

fn map(args: &Args) -> CliResult<Output> {
    let axis = grid(args)?;
    let m = match args.kind.unwrap_or(Kind::Feasibility) {
        Kind::Strong => strong_balance_map(&axis, &axis, &args.dims, args.balance_constant)?,
        kind => {
            let kind = match kind {
                Kind::Feasibility => BalanceKind::Feasibility,
                Kind::Optimal => BalanceKind::OptimalFilter,
                _ => BalanceKind::SirFilter,
            };
            build_map(kind, &axis, &axis, &args.dims, args.balance_constant)?
        }
    };
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &m),
        Format::Csv => csv_document(args, &[], &m.level_sets_csv()),
    }))
}

fn maxdim(args: &Args) -> CliResult<Output> {
    let kind = filter_kind(args)?;
    let curve = max_dim_curve(kind, &grid(args)?)?;
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &curve),
        Format::Csv => csv_document(args, &[], &curve.to_csv()),
    }))
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    median_ess: Option<f64>,
    max_weight: Option<f64>,
    first_collapse: Option<usize>,
    measure_zero_at: Option<usize>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FilterSummary {
    kind: FilterKind,
    sigma_frob: Option<f64>,
    collapse_threshold: f64,
    n_seeds: usize,
    n_errors: usize,
    collapse_fraction: f64,
    seeds: Vec<SeedSummary>,
}

fn filter(args: &Args) -> CliResult<Output> {
    let problem = load_problem(args)?;
    let kind = filter_kind(args)?;
    let threshold = threshold(args)?;
    let seeds = seeds(args)?;
    let supplied = args.trajectory.as_deref().map(load_trajectory).transpose()?;

    let runs: Vec<(u64, Result<FilterRun, String>)> = seeds
        .iter()
        .map(|&seed| {
            let config = FilterConfig {
                kind,
                n_steps: args.steps,
                particles: args.particles,
                seed,
                resample_every: args.resample_every,
            };
            let run = match &supplied {
                Some(t) => run_filter_on(&problem, t, &config),
                None => simulate(&problem, args.steps, seed)
                    .and_then(|t| run_filter_on(&problem, &t, &config)),
            };
            (seed, run.map_err(|e| e.to_string()))
        })
        .collect();
    // A rejected configuration fails every seed alike; report it as such.
    if let [(_, Err(_)), ..] = runs.as_slice() {
        if runs.iter().all(|(_, r)| r.is_err()) {
            let config = FilterConfig::new(kind, args.steps, args.particles, seeds[0]);
            let t = match &supplied {
                Some(t) => t.clone(),
                None => simulate(&problem, args.steps, seeds[0])?,
            };
            run_filter_on(&problem, &t, &config)?;
        }
    }

    let summaries: Vec<SeedSummary> = runs
        .iter()
        .map(|(seed, run)| match run {
            Ok(r) => SeedSummary {
                seed: *seed,
                median_ess: Some(r.median_ess()),
                max_weight: Some(r.max_weight()),
                first_collapse: r.first_collapse(threshold),
                measure_zero_at: r.measure_zero_at,
                error: None,
            },
            Err(e) => SeedSummary {
                seed: *seed,
                median_ess: None,
                max_weight: None,
                first_collapse: None,
                measure_zero_at: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    let ok: Vec<&FilterRun> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let collapsed = summaries.iter().filter(|s| s.first_collapse.is_some()).count();
    let summary = FilterSummary {
        kind,
        sigma_frob: ok.first().and_then(|r| r.sigma_frob),
        collapse_threshold: threshold,
        n_seeds: seeds.len(),
        n_errors: seeds.len() - ok.len(),
        collapse_fraction: if ok.is_empty() { f64::NAN } else { collapsed as f64 / ok.len() as f64 },
        seeds: summaries,
    };

    let body = match args.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                summary: &'a FilterSummary,
                runs: Vec<&'a FilterRun>,
            }
            json_document(args, &Doc { summary: &summary, runs: ok.clone() })
        }
        Format::Csv => {
            let mut rows = format!("{}\n", FilterRun::CSV_HEADER);
            for r in &ok {
                rows.push_str(&r.csv_rows());
            }
            let sigma = summary.sigma_frob.map_or_else(|| "none".to_string(), float);
            csv_document(args, &[("sigma_frob", sigma)], &rows)
        }
    };
    Ok(Output { body, summary: Some(json_document(args, &summary)) })
}

#[derive(Serialize)]
struct SmoothResult {
    constraint: Constraint,
    n_data: usize,
    frob_cov: f64,
    frob_cov_lower_bound: bool,
    smoother_condition: SmootherCondition,
    sufficient_conditions: Option<SufficientConditions>,
    #[serde(serialize_with = "rows")]
    mode: Vec<DVector<f64>>,
}

fn rows<S: serde::Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(x.as_slice())?;
    }
    seq.end()
}

fn smooth(args: &Args) -> CliResult<Output> {
    let problem = load_problem(args)?;
    let t = trajectory(args, &problem)?;
    let obs = &t.observations;
    let weak = SpdFactor::new(&problem.q).is_some();
    let (constraint, frob_cov, lower_bound, mode) = if weak {
        let post = weak_posterior(&problem, obs)?;
        (Constraint::Weak, post.frob_cov, post.frob_cov_lower_bound, post.trajectory())
    } else {
        let post = strong_precision(&problem, obs.len())?;
        let mut x = strong_mode(&problem, obs)?;
        let mut mode = vec![x.clone()];
        for _ in obs {
            x = &problem.a * x;
            mode.push(x.clone());
        }
        (Constraint::Strong, post.frob_cov, false, mode)
    };
    let result = SmoothResult {
        constraint,
        n_data: obs.len(),
        frob_cov,
        frob_cov_lower_bound: lower_bound,
        smoother_condition: sir_smoother_condition(&problem),
        // Filter conditions need the steady state, which a perfect model reaches only like 1/n.
        sufficient_conditions: match constraint {
            Constraint::Weak => general_sufficient_conditions(&problem, args.balance_constant).ok(),
            Constraint::Strong => None,
        },
        mode,
    };
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &result),
        Format::Csv => {
            let extra = [
                ("constraint", format!("{:?}", result.constraint).to_lowercase()),
                ("frob_cov", float(result.frob_cov)),
                ("frob_cov_lower_bound", result.frob_cov_lower_bound.to_string()),
                ("smoother_condition_holds", result.smoother_condition.holds.to_string()),
            ];
            csv_document(args, &extra, &vectors_csv(&result.mode))
        }
    }))
}

/// `step,x0,x1,…` with one row per time.
fn vectors_csv(v: &[DVector<f64>]) -> String {
    let m = v.first().map_or(0, |x| x.len());
    let mut out = String::from("step");
    for i in 0..m {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (n, x) in v.iter().enumerate() {
        out.push_str(&n.to_string());
        for value in x.iter() {
            out.push(',');
            out.push_str(&float(*value));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct SweepCell {
    cell: usize,
    value: f64,
    m: usize,
    q: f64,
    r: f64,
    n_seeds: usize,
    n_errors: usize,
    collapse_fraction: f64,
    collapse_stat: Option<f64>,
    median_max_weight: f64,
}

fn collapse_sweep(args: &Args) -> CliResult<Output> {
    let kind = filter_kind(args)?;
    let threshold = threshold(args)?;
    let seeds = seeds(args)?;
    if args.problem.is_some() {
        return Err(input("collapse-sweep builds isotropic problems; --problem is not accepted"));
    }
    if args.values.is_empty() {
        return Err(input("collapse-sweep needs --values"));
    }
    let r = args.r.unwrap_or(1.0);
    let shapes = args
        .values
        .iter()
        .map(|&v| match args.sweep {
            SweepParam::Eps => {
                let m = args.m.ok_or_else(|| input("an eps sweep needs --m"))?;
                Ok((m, v * r))
            }
            SweepParam::M => {
                let q = args.q.ok_or_else(|| input("an m sweep needs --q"))?;
                if !(v >= 1.0 && v.fract() == 0.0) {
                    return Err(input(format!("m sweep values must be positive integers, got {v}")));
                }
                Ok((v as usize, q))
            }
        })
        .collect::<CliResult<Vec<(usize, f64)>>>()?;
    let problems = shapes
        .iter()
        .map(|&(m, q)| isotropic(m, q, r, args.sigma0))
        .collect::<CliResult<Vec<_>>>()?;

    let cells: Vec<SweepCell> = problems
        .par_iter()
        .zip(&args.values)
        .enumerate()
        .map(|(cell, (problem, &value))| {
            let (m, q) = shapes[cell];
            let runs: Vec<Result<FilterRun, _>> = seeds
                .iter()
                .map(|&seed| {
                    let config = FilterConfig {
                        kind,
                        n_steps: args.steps,
                        particles: args.particles,
                        seed,
                        resample_every: args.resample_every,
                    };
                    simulate(problem, args.steps, seed).and_then(|t| run_filter_on(problem, &t, &config))
                })
                .collect();
            let ok: Vec<&FilterRun> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
            let collapsed = ok.iter().filter(|r| r.first_collapse(threshold).is_some()).count();
            let mut max_w: Vec<f64> = ok.iter().map(|r| r.max_weight()).collect();
            SweepCell {
                cell,
                value,
                m,
                q,
                r,
                n_seeds: seeds.len(),
                n_errors: seeds.len() - ok.len(),
                collapse_fraction: if ok.is_empty() { f64::NAN } else { collapsed as f64 / ok.len() as f64 },
                collapse_stat: ok.first().and_then(|r| r.sigma_frob),
                median_max_weight: median(&mut max_w),
            }
        })
        .collect();

    let parameter = match args.sweep {
        SweepParam::Eps => "eps",
        SweepParam::M => "m",
    };
    let kind_name = match kind {
        FilterKind::Optimal => "optimal",
        FilterKind::Sir => "sir",
    };
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &cells),
        Format::Csv => {
            let mut rows = String::from(
                "cell,parameter,value,kind,m,q,r,n_seeds,n_errors,collapse_fraction,collapse_stat,median_max_weight\n",
            );
            for c in &cells {
                rows.push_str(&format!(
                    "{},{parameter},{},{kind_name},{},{},{},{},{},{},{},{}\n",
                    c.cell,
                    float(c.value),
                    c.m,
                    float(c.q),
                    float(c.r),
                    c.n_seeds,
                    c.n_errors,
                    float(c.collapse_fraction),
                    c.collapse_stat.map_or_else(|| "nan".to_string(), float),
                    float(c.median_max_weight)
                ));
            }
            let extra = [("collapse_threshold", float(threshold))];
            csv_document(args, &extra, &rows)
        }
    }))
}

fn simulate_cmd(args: &Args) -> CliResult<Output> {
    let problem = load_problem(args)?;
    let t = simulate(&problem, args.steps, first_seed(args))?;
    Ok(body_only(match args.format {
        Format::Json => json_document(args, &t),
        Format::Csv => {
            let mut rows = String::from("# truth\n");
            rows.push_str(&vectors_csv(&t.truth));
            rows.push_str("# observations (step 1 onward)\n");
            let obs: Vec<DVector<f64>> = t.observations.clone();
            rows.push_str(&vectors_csv(&obs));
            csv_document(args, &[("seed", t.seed.to_string())], &rows)
        }
    }))
}
