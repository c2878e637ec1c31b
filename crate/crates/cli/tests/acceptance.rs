//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 4 is a known failure. `P ≤ P_upper` does not hold in PSD order for
//! matrix problems; the harness prints FAIL for it and still requires every
//! other criterion to pass.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use effdim_core::balance::log_grid;
use effdim_core::fixtures::{random_detectable, random_problem, seeded, InstanceShape};
use effdim_core::kalman::{solve_dare_default, DEFAULT_MAX_ITER};
use effdim_core::{
    isotropic_steady_p, kalman_filter, max_dimension, optimal_smoother_sample,
    p_upper_bound, psd_compare, run_filter, simulate, solve_dare, strong_precision, weak_mode,
    weak_posterior, Constraint, FilterConfig, FilterKind, LinearGaussianProblem,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Criteria expected to print FAIL.
const KNOWN_FAILURES: &[usize] = &[4];

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(detail: String, elapsed: Duration, budget: Option<u64>) -> Check {
    match budget {
        Some(s) if elapsed.as_secs_f64() > s as f64 => {
            Err(format!("{detail}; took {:.1} s, budget {s} s", elapsed.as_secs_f64()))
        }
        _ => Ok(detail),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1_isotropic_dare() -> Check {
    let qs = log_grid(1e-2, 1e2, 10).unwrap();
    let rs = log_grid(1e-1, 1e1, 5).unwrap();
    let mut worst: f64 = 0.0;
    for &m in &[1usize, 5, 100] {
        for &q in &qs {
            for &r in &rs {
                let p = LinearGaussianProblem::isotropic(m, q, r, 0.0).unwrap();
                let ss = solve_dare(&p, 1e-12, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
                let closed = (m as f64).sqrt() * ((q * q + 4.0 * q * r).sqrt() - q) / 2.0;
                worst = worst.max(rel(ss.eff_dim, closed));
            }
        }
    }
    ensure(worst < 1e-8, format!("150 solves, worst relative error {worst:.2e}"))
}

fn effdim_binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_effdim"))
}

fn cli(flags: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(effdim_binary()).args(flags).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{flags:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c2_feasibility_level_sets() -> Check {
    let stdout = cli(&["--command", "map", "--kind", "feasibility", "--dims", "5,10,100"])?;
    let doc: serde_json::Value = serde_json::from_slice(&stdout).map_err(|e| e.to_string())?;
    let sets = doc["result"]["level_sets"].as_array().ok_or("no level sets")?;
    if sets.len() != 3 {
        return Err(format!("{} level sets, expected 3", sets.len()));
    }
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for (i, set) in sets.iter().enumerate() {
        let m = set["m"].as_f64().ok_or("m")?;
        let points = set["points"].as_array().ok_or("points")?;
        let take = if i == 0 { 8 } else { 6 };
        if points.len() < take {
            return Err(format!("m={m}: only {} points", points.len()));
        }
        for j in 0..take {
            let pt = &points[j * (points.len() - 1) / (take - 1)];
            let (q, r) = (pt[0].as_f64().ok_or("q")?, pt[1].as_f64().ok_or("r")?);
            let boundary = 1.0 / m.sqrt() + 1.0 / (q * m);
            worst = worst.max(rel(r, boundary));
            probes += 1;
        }
    }
    ensure(worst <= 1e-5, format!("{probes} probes, worst relative error {worst:.2e}"))
}

fn c3_max_dimension() -> Check {
    let a = max_dimension(1.0, FilterKind::Optimal).map_err(|e| e.to_string())?;
    let b = max_dimension(1.0, FilterKind::Sir).map_err(|e| e.to_string())?;
    let c = max_dimension(100.0, FilterKind::Optimal).map_err(|e| e.to_string())?;
    ensure(
        (a - 10.47).abs() <= 0.01 && (b - 0.382).abs() <= 0.001 && rel(c, 1.04e4) <= 0.01,
        format!("optimal(1) = {a:.4}, sir(1) = {b:.5}, optimal(100) = {c:.1}"),
    )
}

fn c4_bounds_sandwich() -> Check {
    let mut rng = seeded(41);
    let (mut sym, mut asym) = (0, 0);
    let (mut sym_x_fail, mut sym_p_fail, mut asym_fail, mut lower_fail, mut eff_fail) = (0, 0, 0, 0, 0);
    let mut skipped = 0;
    for i in 0..100 {
        let symmetric = i % 2 == 0;
        let p = random_detectable(&mut rng, 8, symmetric);
        let (Ok(ss), Ok(b)) = (solve_dare(&p, 1e-13, DEFAULT_MAX_ITER), p_upper_bound(&p)) else {
            skipped += 1;
            continue;
        };
        let lower = psd_compare(&b.x_lower, &ss.x).unwrap().is_le();
        let upper = psd_compare(&ss.x, &b.x_upper).unwrap().is_le();
        let p_ok = psd_compare(&ss.p, &b.p_upper).unwrap().is_le();
        lower_fail += usize::from(!lower);
        eff_fail += usize::from(ss.eff_dim > b.eff_dim_upper + 1e-8);
        if symmetric {
            sym += 1;
            sym_x_fail += usize::from(!upper);
            sym_p_fail += usize::from(!p_ok);
        } else {
            asym += 1;
            asym_fail += usize::from(!(upper && p_ok));
        }
    }
    let detail = format!(
        "X_l ≤ X failures {lower_fail}; symmetric A: X ≤ X_u failures {sym_x_fail}/{sym}, \
         P ≤ P_upper failures {sym_p_fail}/{sym}; asymmetric A (reported): {asym_fail}/{asym}; \
         eff_dim ≤ upper failures {eff_fail}; {skipped} without bounds"
    );
    // The attainable parts must hold even though the criterion as a whole fails.
    assert_eq!(lower_fail + sym_x_fail + eff_fail, 0, "{detail}");
    ensure(sym_p_fail == 0, detail)
}

fn c5_comparison_theorem() -> Check {
    let mut rng = seeded(42);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..100 {
        let p = random_detectable(&mut rng, 6, false);
        let q_small = &p.q * rng.random_range(0.0..1.0);
        let r_small = &p.r * rng.random_range(0.1..1.0);
        let smaller =
            LinearGaussianProblem::new(p.a.clone(), q_small, p.h.clone(), r_small, p.mu0.clone(), p.sigma0.clone())
                .unwrap();
        let x = solve_dare_default(&p).map_err(|e| e.to_string())?.x;
        let x_small = solve_dare_default(&smaller).map_err(|e| e.to_string())?.x;
        let order = psd_compare(&x_small, &x).unwrap();
        failures += usize::from(!order.is_le());
        worst = worst.min(order.min_eig_diff);
    }
    ensure(failures == 0, format!("100 pairs, {failures} failures, min eig(X − X̃) = {worst:.2e}"))
}

fn c6_filter_consistency() -> Check {
    let p = LinearGaussianProblem::isotropic(1, 1.0, 1.0, 1.0).unwrap();
    let steady = isotropic_steady_p(1.0, 1.0).unwrap();
    let run = run_filter(&p, &FilterConfig::new(FilterKind::Optimal, 500, 10_000, 21)).map_err(|e| e.to_string())?;
    let tail = &run.reports[20..];
    let post = tail.iter().map(|r| r.posterior_trace).sum::<f64>() / tail.len() as f64;
    let err = tail.iter().map(|r| r.mean_error_norm.powi(2)).sum::<f64>() / tail.len() as f64;
    ensure(
        rel(post, steady) < 0.05,
        format!("ensemble variance {post:.4} vs {steady:.4} (squared error of mean {err:.4})"),
    )
}

/// Fraction of seeds whose first `steps` filter steps exceed `threshold` in max weight.
fn collapse_fraction(p: &LinearGaussianProblem, kind: FilterKind, steps: usize, threshold: f64) -> f64 {
    let collapsed = (0..20u64)
        .filter(|&seed| {
            let run = run_filter(p, &FilterConfig::new(kind, steps, 1000, seed)).unwrap();
            run.first_collapse(threshold).is_some()
        })
        .count();
    collapsed as f64 / 20.0
}

fn steady_isotropic(m: usize, q: f64, r: f64) -> LinearGaussianProblem {
    LinearGaussianProblem::isotropic(m, q, r, isotropic_steady_p(q, r).unwrap()).unwrap()
}

fn c7_collapse_dichotomy() -> Check {
    let sir = collapse_fraction(&steady_isotropic(100, 1.0, 1.0), FilterKind::Sir, 5, 0.5);
    let opt = collapse_fraction(&steady_isotropic(100, 1.0, 0.01), FilterKind::Optimal, 10, 0.2);
    ensure(
        sir >= 0.9 && 1.0 - opt >= 0.9,
        format!("SIR at ε=1 collapsed {:.0}%; optimal at ε=100 uncollapsed {:.0}%", 100.0 * sir, 100.0 * (1.0 - opt)),
    )
}

fn c8_interior_minimum() -> Check {
    let f: Vec<f64> = [0.01, 1.0, 100.0]
        .iter()
        .map(|&eps| collapse_fraction(&steady_isotropic(50, eps, 1.0), FilterKind::Optimal, 5, 0.5))
        .collect();
    ensure(
        f[1] > f[0] && f[1] > f[2],
        format!("collapse fraction at ε = 0.01, 1, 100: {:.2}, {:.2}, {:.2}", f[0], f[1], f[2]),
    )
}

fn c9_strong_formula() -> Check {
    let p = LinearGaussianProblem::isotropic(100, 0.0, 1.0, 1.0).unwrap();
    let f = strong_precision(&p, 1).map_err(|e| e.to_string())?.frob_cov;
    ensure((f - 5.0).abs() < 1e-10, format!("‖Σ‖_F = {f:.12}"))
}

fn random_small(rng: &mut impl Rng) -> LinearGaussianProblem {
    let m = rng.random_range(1..=3);
    let k = rng.random_range(1..=m);
    let a_norm = rng.random_range(0.3..1.2);
    random_problem(rng, InstanceShape { m, k, a_norm, symmetric_a: false })
}

fn c10_weak_oracle() -> Check {
    let mut rng = seeded(43);
    let (mut cov_err, mut mode_err): (f64, f64) = (0.0, 0.0);
    for i in 0..20 {
        let p = random_small(&mut rng);
        let n = rng.random_range(1..=6);
        let zs = simulate(&p, n, i).unwrap().observations;
        let (_, cov) = common::weak_oracle(&p, &zs);
        let post = weak_posterior(&p, &zs).map_err(|e| e.to_string())?;
        let inv = post.precision.to_dense().try_inverse().ok_or("singular precision")?;
        cov_err = cov_err.max((&inv - &cov).norm());
        let mode = weak_mode(&p, &zs).map_err(|e| e.to_string())?;
        let kf = kalman_filter(&p, &zs).map_err(|e| e.to_string())?;
        mode_err = mode_err.max((mode.last().unwrap() - kf.means.last().unwrap()).norm());
    }
    ensure(
        cov_err < 1e-8 && mode_err < 1e-8,
        format!("20 instances, covariance error {cov_err:.2e}, final-block mode error {mode_err:.2e}"),
    )
}

/// Max z-score of the sample mean against the mode, and relative covariance error.
fn smoother_moments(p: &LinearGaussianProblem, zs: &[DVector<f64>], c: Constraint, cov: &DMatrix<f64>) -> Result<(bool, f64, f64), String> {
    let n = 100_000;
    let s = optimal_smoother_sample(p, zs, n, 9, c).map_err(|e| e.to_string())?;
    let equal = s.weights.iter().all(|&w| w == 1.0 / n as f64);
    let d = s.mode.len();
    let mean = s.samples.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let sc = s.samples.iter().fold(DMatrix::zeros(d, d), |acc, x| {
        let e = x - &mean;
        acc + &e * e.transpose()
    }) / (n - 1) as f64;
    let z = (0..d)
        .map(|i| (mean[i] - s.mode[i]).abs() / (cov[(i, i)] / n as f64).sqrt().max(1e-300))
        .fold(0.0, f64::max);
    Ok((equal, z, (&sc - cov).norm() / cov.norm()))
}

fn c11_optimal_smoother() -> Check {
    let mut rng = seeded(36);
    let p = random_problem(&mut rng, InstanceShape { m: 2, k: 1, a_norm: 0.8, symmetric_a: false });
    let zs = simulate(&p, 3, 1).unwrap().observations;
    let (_, weak_cov) = common::weak_oracle(&p, &zs);
    let (_, strong_cov) = common::strong_oracle(&p, &zs);
    let mut t = DMatrix::zeros(8, 2);
    let mut power = DMatrix::identity(2, 2);
    for j in 0..4 {
        t.view_mut((2 * j, 0), (2, 2)).copy_from(&power);
        power = &p.a * power;
    }
    let strong_traj = &t * strong_cov * t.transpose();
    let (we, wz, wc) = smoother_moments(&p, &zs, Constraint::Weak, &weak_cov)?;
    let (se, sz, sc) = smoother_moments(&p, &zs, Constraint::Strong, &strong_traj)?;
    ensure(
        we && se && wz <= 3.0 && sz <= 3.0 && wc < 0.05 && sc < 0.05,
        format!(
            "weights equal: {}; weak max z {wz:.2}, cov error {wc:.3}; strong max z {sz:.2}, cov error {sc:.3}",
            we && se
        ),
    )
}

fn c12_reproducibility() -> Check {
    let dir = std::env::temp_dir().join(format!("effdim-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let problem = dir.join("problem.json");
    let mut rng = seeded(44);
    let p = random_problem(&mut rng, InstanceShape { m: 3, k: 2, a_norm: 0.8, symmetric_a: true });
    p.save(&problem).map_err(|e| e.to_string())?;
    let problem = problem.to_str().unwrap().to_string();
    let inline = ["--m", "4", "--q", "1", "--r", "1"];
    let runs: Vec<Vec<&str>> = vec![
        [&["--command", "effdim", "--problem", &problem][..]].concat(),
        [&["--command", "bounds", "--problem", &problem][..]].concat(),
        vec!["--command", "map", "--kind", "optimal", "--grid-points", "40"],
        vec!["--command", "maxdim", "--kind", "sir", "--format", "csv"],
        [&["--command", "filter", "--seeds", "0..3", "--steps", "10", "--particles", "200"][..], &inline].concat(),
        [&["--command", "filter", "--kind", "sir", "--seeds", "4", "--steps", "10", "--particles", "200", "--format", "csv"][..], &inline].concat(),
        [&["--command", "smooth", "--problem", &problem, "--steps", "5", "--seeds", "3"][..]].concat(),
        [&["--command", "simulate", "--steps", "5", "--seeds", "2"][..], &inline].concat(),
        vec!["--command", "collapse-sweep", "--m", "8", "--values", "0.1,1,10", "--seeds", "0..3", "--steps", "4", "--particles", "100", "--format", "csv"],
    ];
    let mut compared = 0;
    for (i, flags) in runs.iter().enumerate() {
        let outputs: Vec<(Vec<u8>, Option<Vec<u8>>)> = (0..2)
            .map(|k| {
                let out = dir.join(format!("run{i}-{k}.out"));
                let mut with_out = flags.clone();
                with_out.extend(["--out", out.to_str().unwrap()]);
                cli(&with_out)?;
                let body = std::fs::read(&out).map_err(|e| e.to_string())?;
                let mut summary = out.into_os_string();
                summary.push(".summary.json");
                Ok((body, std::fs::read(&summary).ok()))
            })
            .collect::<Result<_, String>>()?;
        if outputs[0] != outputs[1] {
            return Err(format!("outputs differ for {flags:?}"));
        }
        if cli(flags)? != outputs[0].0 {
            return Err(format!("stdout differs from file output for {flags:?}"));
        }
        compared += 1;
    }
    let _ = std::fs::remove_dir_all(&dir);
    ensure(compared == runs.len(), format!("{compared} commands byte-identical across runs"))
}

#[test]
fn acceptance() {
    let criteria: Vec<(usize, &str, fn() -> Check, Option<u64>)> = vec![
        (1, "isotropic DARE oracle", c1_isotropic_dare, Some(10)),
        (2, "feasibility level sets", c2_feasibility_level_sets, None),
        (3, "maximum dimension values", c3_max_dimension, None),
        (4, "bounds sandwich", c4_bounds_sandwich, Some(30)),
        (5, "comparison monotonicity", c5_comparison_theorem, None),
        (6, "filter consistency", c6_filter_consistency, Some(60)),
        (7, "collapse dichotomy", c7_collapse_dichotomy, Some(300)),
        (8, "interior collapse maximum", c8_interior_minimum, None),
        (9, "strong-constraint formula", c9_strong_formula, None),
        (10, "weak-constraint oracle", c10_weak_oracle, None),
        (11, "optimal smoother", c11_optimal_smoother, None),
        (12, "CLI reproducibility", c12_reproducibility, None),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check().and_then(|d| within_budget(d, start.elapsed(), budget));
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.contains(&id);
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let note = if known && outcome.is_err() { " (known failure)" } else { "" };
        println!("criterion {id:>2} {status}{note}: {name}: {detail} [{secs:.1} s]");
        if outcome.is_err() != known {
            unexpected.push(id);
        }
    }
    // A known failure that starts passing is also flagged, so the list stays accurate.
    assert!(unexpected.is_empty(), "unexpected outcome for criteria {unexpected:?}");
}
