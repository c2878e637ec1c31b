//! Dense reference computations shared by the integration tests.

#![allow(dead_code)]

use effdim_core::LinearGaussianProblem;
use nalgebra::{DMatrix, DVector};

/// Prior mean and covariance of the stacked trajectory `(x⁰, …, xⁿ)`.
pub fn trajectory_prior(p: &LinearGaussianProblem, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let m = p.state_dim();
    let mut mean = DVector::zeros((n + 1) * m);
    let mut cov = DMatrix::zeros((n + 1) * m, (n + 1) * m);
    let mut mu = p.mu0.clone();
    let mut marg = p.sigma0.clone();
    for i in 0..=n {
        mean.rows_mut(i * m, m).copy_from(&mu);
        // Cov(xʲ, xⁱ) = A^(j−i) Cov(xⁱ, xⁱ) for j ≥ i.
        let mut block = marg.clone();
        for j in i..=n {
            cov.view_mut((j * m, i * m), (m, m)).copy_from(&block);
            cov.view_mut((i * m, j * m), (m, m)).copy_from(&block.transpose());
            block = &p.a * block;
        }
        mu = &p.a * mu;
        marg = &p.a * marg * p.a.transpose() + &p.q;
    }
    (mean, cov)
}

/// Condition `N(mean, cov)` on `z = G x + v`, `v ~ N(0, noise)`.
pub fn condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    g: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = g * cov * g.transpose() + noise;
    let s_inv = s.try_inverse().expect("data covariance is invertible");
    let gain = cov * g.transpose() * s_inv;
    let post_mean = mean + &gain * (z - g * mean);
    let post_cov = cov - &gain * g * cov;
    (post_mean, (&post_cov + post_cov.transpose()) * 0.5)
}

fn block_diag(block: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(n * r, n * c);
    for i in 0..n {
        out.view_mut((i * r, i * c), (r, c)).copy_from(block);
    }
    out
}

fn stack(zs: &[DVector<f64>]) -> DVector<f64> {
    let k = zs.first().map_or(0, |z| z.len());
    let mut out = DVector::zeros(zs.len() * k);
    for (j, z) in zs.iter().enumerate() {
        out.rows_mut(j * k, k).copy_from(z);
    }
    out
}

/// Posterior of `(x⁰, …, xⁿ)` given `z¹..zⁿ` by joint-Gaussian conditioning.
pub fn weak_oracle(p: &LinearGaussianProblem, zs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, k, n) = (p.state_dim(), p.data_dim(), zs.len());
    let (mean, cov) = trajectory_prior(p, n);
    let mut g = DMatrix::zeros(n * k, (n + 1) * m);
    for j in 1..=n {
        g.view_mut(((j - 1) * k, j * m), (k, m)).copy_from(&p.h);
    }
    condition(&mean, &cov, &g, &block_diag(&p.r, n), &stack(zs))
}

/// Posterior of `x⁰` given `zʲ = HAʲx⁰ + vʲ`.
pub fn strong_oracle(p: &LinearGaussianProblem, zs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, k, n) = (p.state_dim(), p.data_dim(), zs.len());
    let mut g = DMatrix::zeros(n * k, m);
    let mut power = p.a.clone();
    for j in 0..n {
        g.view_mut((j * k, 0), (k, m)).copy_from(&(&p.h * &power));
        power = &p.a * power;
    }
    condition(&p.mu0, &p.sigma0, &g, &block_diag(&p.r, n), &stack(zs))
}

pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

/// Spearman rank correlation (no tie correction).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
