use effdim_core::bounds::eigenvalue_bound;
use effdim_core::fixtures::{random_detectable, random_problem, seeded, InstanceShape};
use effdim_core::model::PSD_TOL;
use effdim_core::{p_upper_bound, psd_compare, solve_dare, LinearGaussianProblem, SymMatrix};
use effdim_core::kalman::DEFAULT_MAX_ITER;
use nalgebra::DMatrix;

struct Outcome {
    lower_ok: bool,
    upper_ok: bool,
    p_ok: bool,
    eff_ok: bool,
}

fn check(p: &LinearGaussianProblem) -> Option<Outcome> {
    let ss = solve_dare(p, 1e-13, DEFAULT_MAX_ITER).ok()?;
    let b = p_upper_bound(p).ok()?;
    let q = SymMatrix::new(p.q.clone()).unwrap();
    assert!(psd_compare(&q, &b.x_lower).unwrap().is_le());
    Some(Outcome {
        lower_ok: psd_compare(&b.x_lower, &ss.x).unwrap().is_le(),
        upper_ok: psd_compare(&ss.x, &b.x_upper).unwrap().is_le(),
        p_ok: psd_compare(&ss.p, &b.p_upper).unwrap().is_le(),
        eff_ok: ss.eff_dim <= b.eff_dim_upper + 1e-8,
    })
}

#[test]
fn sandwich_on_symmetric_instances() {
    let mut rng = seeded(11);
    let mut checked = 0;
    let mut p_violations = 0;
    for _ in 0..100 {
        let p = random_detectable(&mut rng, 8, true);
        let Some(o) = check(&p) else { continue };
        checked += 1;
        assert!(o.lower_ok, "X_l ≤ X failed");
        assert!(o.upper_ok, "X ≤ X_u failed");
        assert!(o.eff_ok);
        p_violations += usize::from(!o.p_ok);
    }
    assert!(checked >= 80, "only {checked} instances admitted both bounds");
    eprintln!("symmetric A: {p_violations}/{checked} instances with P ≰ P_upper");
}

/// `X_l ≤ X` does not imply `X_l M X_l ≤ X M X`, so the posterior bound built
/// from `X_l` can fail in PSD order even when both DARE bounds hold.
#[test]
fn posterior_bound_is_not_a_psd_bound_for_matrices() {
    let mut rng = seeded(11);
    let violated = (0..100).any(|_| {
        let p = random_detectable(&mut rng, 8, true);
        check(&p).is_some_and(|o| o.lower_ok && o.upper_ok && !o.p_ok)
    });
    assert!(violated);
    let scalar = LinearGaussianProblem::isotropic(1, 0.7, 1.3, 0.0).unwrap();
    assert!(check(&scalar).unwrap().p_ok);
}

#[test]
fn asymmetric_a_lower_bound_holds_upper_reported() {
    let mut rng = seeded(12);
    let mut upper_failures = 0;
    for _ in 0..100 {
        let p = random_detectable(&mut rng, 8, false);
        let Some(o) = check(&p) else { continue };
        assert!(o.lower_ok);
        assert!(o.eff_ok);
        if !(o.upper_ok && o.p_ok) {
            upper_failures += 1;
        }
    }
    eprintln!("asymmetric A: {upper_failures}/100 instances violating X ≤ X_u or P ≤ P_upper");
}

#[test]
fn stable_diagonal_a_upper_bound() {
    let mut rng = seeded(13);
    for i in 0..100 {
        let mut p = random_problem(&mut rng, InstanceShape { m: 4, k: 4, a_norm: 0.9, symmetric_a: true });
        let d: Vec<f64> = (0..4).map(|j| 0.9 * (((i * 4 + j) as f64 * 0.7361).sin())).collect();
        p.a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
        p.q = DMatrix::identity(4, 4) * (0.1 + i as f64 * 0.02);
        p.r = DMatrix::identity(4, 4) * (0.2 + i as f64 * 0.01);
        let ss = solve_dare(&p, 1e-13, DEFAULT_MAX_ITER).unwrap();
        let b = p_upper_bound(&p).unwrap();
        assert!(psd_compare(&ss.x, &b.x_upper).unwrap().is_le());
        assert!(eigenvalue_bound(&p).unwrap() >= ss.x.eigenvalues()[3] - PSD_TOL);
    }
}

#[test]
fn upper_effective_dimension_is_monotone_in_q() {
    let mut last = 0.0;
    for i in 0..40 {
        let q = 1e-4 * 1.3f64.powi(i);
        let p = LinearGaussianProblem::isotropic(6, q, 1.0, 0.0).unwrap();
        let b = p_upper_bound(&p).unwrap();
        assert!(b.eff_dim_upper > last);
        last = b.eff_dim_upper;
    }
}

#[test]
fn static_problem_upper_bound_is_one_step_posterior() {
    let mut rng = seeded(14);
    let mut p = random_problem(&mut rng, InstanceShape { m: 3, k: 2, a_norm: 0.5, symmetric_a: false });
    p.a.fill(0.0);
    let b = p_upper_bound(&p).unwrap();
    let s = &p.h * &p.q * p.h.transpose() + &p.r;
    let expected = &p.q - &p.q * p.h.transpose() * s.try_inverse().unwrap() * &p.h * &p.q;
    assert!((b.p_upper.as_matrix() - expected).norm() < 1e-12);
    assert!((b.x_upper.as_matrix() - &p.q).norm() < 1e-12);
}
