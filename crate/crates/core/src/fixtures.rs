//! Seeded random problem instances for tests and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::LinearGaussianProblem;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `BBᵀ/m + floor·I`.
pub fn random_spd(rng: &mut impl Rng, m: usize, floor: f64) -> DMatrix<f64> {
    let b = gaussian_matrix(rng, m, m);
    (&b * b.transpose()) / m as f64 + DMatrix::identity(m, m) * floor
}

/// Gaussian matrix rescaled to spectral norm `norm`.
pub fn scaled_matrix(rng: &mut impl Rng, m: usize, norm: f64, symmetric: bool) -> DMatrix<f64> {
    let mut a = gaussian_matrix(rng, m, m);
    if symmetric {
        a = (&a + a.transpose()) * 0.5;
    }
    let s = a.singular_values().max();
    if s > 0.0 {
        a *= norm / s;
    }
    a
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub m: usize,
    pub k: usize,
    /// Spectral norm of `A`.
    pub a_norm: f64,
    pub symmetric_a: bool,
}

/// Random problem with PD `Q`, `R`, `Σ₀` and the given shape.
pub fn random_problem(rng: &mut impl Rng, shape: InstanceShape) -> LinearGaussianProblem {
    let InstanceShape { m, k, a_norm, symmetric_a } = shape;
    let a = scaled_matrix(rng, m, a_norm, symmetric_a);
    let q = random_spd(rng, m, 0.1);
    let h = gaussian_matrix(rng, k, m);
    let r = random_spd(rng, k, 0.1);
    let mu0 = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    let sigma0 = random_spd(rng, m, 0.1);
    LinearGaussianProblem::new(a, q, h, r, mu0, sigma0).expect("random instance is valid")
}

/// Random detectable instance with `m ≤ max_m`: unstable `A` only with full-rank `H`.
pub fn random_detectable(rng: &mut impl Rng, max_m: usize, symmetric_a: bool) -> LinearGaussianProblem {
    let m = rng.random_range(1..=max_m);
    let stable = rng.random_bool(0.7);
    let (k, a_norm) = if stable {
        (rng.random_range(1..=m), rng.random_range(0.1..0.95))
    } else {
        (m, rng.random_range(0.95..1.5))
    };
    random_problem(rng, InstanceShape { m, k, a_norm, symmetric_a })
}
