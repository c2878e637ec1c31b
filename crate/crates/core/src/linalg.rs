//! Dense linear-algebra helpers shared by the assimilation modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition estimate above which a factorization counts as singular.
pub const MAX_CONDITION: f64 = 1e14;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (nondecreasing) and matching eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Returns `L` with `L Lᵀ = M` for a symmetric PSD `M`.
///
/// Works for singular `M`; eigenvalues within `tol·(1+‖M‖_F)` below zero are
/// clipped, anything more negative is rejected.
pub fn psd_factor(m: &DMatrix<f64>, name: &str, tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.unpack());
    }
    let (values, vectors) = sym_eigen(m);
    let floor = -tol * (1.0 + m.norm());
    if values.first().is_some_and(|&v| v < floor) {
        return Err(Error::NotPsd(name.to_string()));
    }
    let mut l = vectors;
    for (j, &v) in values.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// Cholesky factor of an SPD matrix together with a cheap condition estimate.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    lower: DMatrix<f64>,
    condition: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(m.clone())?;
        let lower = chol.l();
        let diag = lower.diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
        let condition = if diag.is_empty() {
            1.0
        } else if lo == 0.0 {
            f64::INFINITY
        } else {
            (hi / lo).powi(2)
        };
        Some(Self { chol, lower, condition })
    }

    /// Factor `m`, failing with [`Error::Singular`] when it is not numerically SPD.
    pub fn spd(m: &DMatrix<f64>, name: &str) -> Result<Self> {
        match Self::new(m) {
            Some(f) if f.condition <= MAX_CONDITION => Ok(f),
            _ => Err(Error::Singular(name.to_string())),
        }
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    /// `L⁻¹ v`, so that `‖L⁻¹ v‖² = vᵀ M⁻¹ v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    /// `vᵀ M⁻¹ v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    /// `L⁻ᵀ v`; applied to standard normal `v` this has covariance `M⁻¹`.
    pub fn colour_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lower
            .tr_solve_lower_triangular(v)
            .expect("Cholesky factor has a nonzero diagonal")
    }
}

/// Factor the innovation covariance `HXHᵀ + R`.
pub fn innovation_factor(s: &DMatrix<f64>) -> Result<SpdFactor> {
    match SpdFactor::new(s) {
        Some(f) if f.condition <= MAX_CONDITION => Ok(f),
        Some(f) => Err(Error::InnovationSingular(f.condition)),
        None => Err(Error::InnovationSingular(f64::INFINITY)),
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    SpdFactor::spd(m, name).map(|f| f.inverse())
}
