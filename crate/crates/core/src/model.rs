//! Linear-Gaussian state-space problems and symmetric-matrix utilities.
//!
//! A problem is the tuple `(A, Q, H, R, μ₀, Σ₀)` of the model
//! `xⁿ⁺¹ = A xⁿ + wⁿ`, `wⁿ ~ N(0, Q)` observed through
//! `zⁿ⁺¹ = H xⁿ⁺¹ + vⁿ⁺¹`, `vⁿ⁺¹ ~ N(0, R)`, with `x⁰ ~ N(μ₀, Σ₀)`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance for PSD tests: `tol = PSD_TOL·(1 + ‖M‖_F)`.
pub const PSD_TOL: f64 = 1e-10;

/// Overridable tolerances for symmetry and PSD classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub symmetry: f64,
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { symmetry: SYMMETRY_TOL, psd: PSD_TOL }
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_asymmetry(m) <= tol * m.amax().max(1.0)
}

/// A real symmetric matrix.
///
/// Inputs within the symmetry tolerance are stored as `(M + Mᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYMMETRY_TOL)
    }

    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        if !is_symmetric(&m, tol) {
            return Err(Error::NotSymmetric("matrix".into()));
        }
        Ok(Self(linalg::symmetrize(&m)))
    }

    /// Symmetrize a matrix that is symmetric up to rounding, e.g. `A P Aᵀ`.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        Self(linalg::symmetrize(&m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in nondecreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues(&self.0)
    }

    pub fn frobenius(&self) -> f64 {
        frobenius_norm(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let floor = -tol * (1.0 + self.frobenius());
        self.eigenvalues().first().is_none_or(|&v| v >= floor)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = matrix_from_rows(&rows, "matrix").map_err(serde::de::Error::custom)?;
        SymMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Serialize a matrix as row-major nested arrays.
pub fn matrix_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    rows_of(m).serialize(s)
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Input(format!(
            "key `{key}`: row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Frobenius norm `(Σᵢⱼ mᵢⱼ²)^{1/2}` of a symmetric matrix.
pub fn frobenius(m: &SymMatrix) -> f64 {
    m.frobenius()
}

/// Frobenius norm of an arbitrary dense matrix.
pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsdVerdict {
    LessOrEqual,
    GreaterOrEqual,
    Incomparable,
    Equal,
}

/// Loewner-order classification of a pair `(C, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdOrder {
    pub verdict: PsdVerdict,
    /// Smallest eigenvalue of `D − C`.
    pub min_eig_diff: f64,
}

impl PsdOrder {
    /// `C ≤ D` holds (including equality).
    pub fn is_le(&self) -> bool {
        matches!(self.verdict, PsdVerdict::LessOrEqual | PsdVerdict::Equal)
    }

    /// `C ≥ D` holds (including equality).
    pub fn is_ge(&self) -> bool {
        matches!(self.verdict, PsdVerdict::GreaterOrEqual | PsdVerdict::Equal)
    }
}

/// Classify `C` against `D` in the Loewner order.
pub fn psd_compare(c: &SymMatrix, d: &SymMatrix) -> Result<PsdOrder> {
    psd_compare_with(c, d, PSD_TOL)
}

/// [`psd_compare`] with tolerance `rel_tol·(1 + ‖D − C‖_F)`.
pub fn psd_compare_with(c: &SymMatrix, d: &SymMatrix, rel_tol: f64) -> Result<PsdOrder> {
    if c.order() != d.order() {
        return Err(Error::Dimension(format!(
            "psd_compare: orders {} and {} differ",
            c.order(),
            d.order()
        )));
    }
    let diff = d.as_matrix() - c.as_matrix();
    let tol = rel_tol * (1.0 + frobenius_norm(&diff));
    let eig = linalg::sym_eigenvalues(&diff);
    let lo = eig.first().copied().unwrap_or(0.0);
    let hi = eig.last().copied().unwrap_or(0.0);
    let verdict = match (lo >= -tol, hi <= tol) {
        (true, true) => PsdVerdict::Equal,
        (true, false) => PsdVerdict::LessOrEqual,
        (false, true) => PsdVerdict::GreaterOrEqual,
        (false, false) => PsdVerdict::Incomparable,
    };
    Ok(PsdOrder { verdict, min_eig_diff: lo })
}

/// Violated invariants of a problem; empty when the problem is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|s| s.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.issues.join("; "))
        }
    }
}

/// The linear-Gaussian data assimilation problem `(A, Q, H, R, μ₀, Σ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianProblem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl LinearGaussianProblem {
    /// Build and validate a problem; covariances are symmetrized.
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        h: DMatrix<f64>,
        r: DMatrix<f64>,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let raw = Self { a, q, h, r, mu0, sigma0 };
        let report = raw.validate();
        if !report.is_empty() {
            return Err(Error::InvalidProblem(report.issues));
        }
        Ok(Self {
            q: linalg::symmetrize(&raw.q),
            r: linalg::symmetrize(&raw.r),
            sigma0: linalg::symmetrize(&raw.sigma0),
            ..raw
        })
    }

    /// `A = H = I_m`, `Q = qI`, `R = rI`, `μ₀ = 0`, `Σ₀ = σ₀I`.
    pub fn isotropic(m: usize, q: f64, r: f64, sigma0: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("state dimension must be positive".into()));
        }
        let eye = DMatrix::<f64>::identity(m, m);
        Self::new(
            eye.clone(),
            &eye * q,
            eye.clone(),
            &eye * r,
            DVector::zeros(m),
            &eye * sigma0,
        )
    }

    /// State dimension `m`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Data dimension `k`.
    pub fn data_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn with_sigma0(mut self, sigma0: DMatrix<f64>) -> Result<Self> {
        self.sigma0 = sigma0;
        Self::new(self.a, self.q, self.h, self.r, self.mu0, self.sigma0)
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Parse the `{A, Q, H, R, mu0, Sigma0}` document; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("malformed JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Input("problem must be a JSON object".into()))?;
        for key in PROBLEM_KEYS {
            let field = obj
                .get(key)
                .ok_or_else(|| Error::Input(format!("missing key `{key}`")))?;
            let typed = if key == "mu0" {
                serde_json::from_value::<Vec<f64>>(field.clone()).map(drop)
            } else {
                serde_json::from_value::<Vec<Vec<f64>>>(field.clone()).map(drop)
            };
            typed.map_err(|e| Error::Input(format!("key `{key}`: {e}")))?;
        }
        let doc: ProblemDoc =
            serde_json::from_value(value).map_err(|e| Error::Input(e.to_string()))?;
        doc.into_problem()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemDoc::from(self)).expect("problem serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

/// Check every invariant of `problem`, naming each failing check.
pub fn validate(problem: &LinearGaussianProblem) -> ValidationReport {
    let mut issues = Vec::new();
    let m = problem.a.nrows();
    let k = problem.h.nrows();

    if !problem.a.is_square() {
        issues.push(format!("A must be square, got {}×{}", m, problem.a.ncols()));
    }
    if problem.q.shape() != (m, m) {
        issues.push(format!("Q must be {m}×{m}"));
    }
    if problem.h.ncols() != m {
        issues.push(format!("H must have {m} columns, got {}", problem.h.ncols()));
    }
    if problem.r.shape() != (k, k) {
        issues.push(format!("R must be {k}×{k}"));
    }
    if problem.mu0.len() != m {
        issues.push(format!("mu0 must have length {m}, got {}", problem.mu0.len()));
    }
    if problem.sigma0.shape() != (m, m) {
        issues.push(format!("Sigma0 must be {m}×{m}"));
    }
    if k > m {
        issues.push(format!("data dimension k={k} exceeds state dimension m={m}"));
    }

    let named: [(&str, &DMatrix<f64>); 5] = [
        ("A", &problem.a),
        ("Q", &problem.q),
        ("H", &problem.h),
        ("R", &problem.r),
        ("Sigma0", &problem.sigma0),
    ];
    for (name, mat) in named {
        if mat.iter().any(|v| !v.is_finite()) {
            issues.push(format!("{name} has non-finite entries"));
        }
    }
    if problem.mu0.iter().any(|v| !v.is_finite()) {
        issues.push("mu0 has non-finite entries".into());
    }

    for (name, mat, definite) in [
        ("Q", &problem.q, false),
        ("R", &problem.r, true),
        ("Sigma0", &problem.sigma0, false),
    ] {
        if !mat.is_square() || mat.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if !is_symmetric(mat, SYMMETRY_TOL) {
            issues.push(format!("{name} not symmetric"));
            continue;
        }
        let sym = linalg::symmetrize(mat);
        let tol = PSD_TOL * (1.0 + frobenius_norm(&sym));
        let lo = linalg::sym_eigenvalues(&sym).first().copied().unwrap_or(0.0);
        if definite && lo <= tol {
            issues.push(format!("{name} not positive definite"));
        } else if !definite && lo < -tol {
            issues.push(format!("{name} not positive semi-definite"));
        }
    }

    ValidationReport { issues }
}

const PROBLEM_KEYS: [&str; 6] = ["A", "Q", "H", "R", "mu0", "Sigma0"];

#[derive(Debug, Serialize, Deserialize)]
struct ProblemDoc {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<Vec<f64>>,
}

impl ProblemDoc {
    fn into_problem(self) -> Result<LinearGaussianProblem> {
        LinearGaussianProblem::new(
            matrix_from_rows(&self.a, "A")?,
            matrix_from_rows(&self.q, "Q")?,
            matrix_from_rows(&self.h, "H")?,
            matrix_from_rows(&self.r, "R")?,
            DVector::from_vec(self.mu0),
            matrix_from_rows(&self.sigma0, "Sigma0")?,
        )
    }
}

impl From<&LinearGaussianProblem> for ProblemDoc {
    fn from(p: &LinearGaussianProblem) -> Self {
        Self {
            a: rows_of(&p.a),
            q: rows_of(&p.q),
            h: rows_of(&p.h),
            r: rows_of(&p.r),
            mu0: p.mu0.iter().copied().collect(),
            sigma0: rows_of(&p.sigma0),
        }
    }
}
