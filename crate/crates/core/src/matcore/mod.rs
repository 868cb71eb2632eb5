//! Dense symmetric and PSD matrix utilities.
//!
//! Everything that holds a covariance goes through [`SymMatrix`], which re-symmetrizes
//! after each operation. Positive definite solves use a Cholesky factor with a single
//! trace-scaled jitter retry.

mod operator;

pub use operator::{Csr, Operator};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use crate::error::{dim_check, Error, Result};

/// Relative jitter added once when a PD factorization fails.
pub const JITTER_SCALE: f64 = 1e-12;

/// Symmetric matrix, symmetrized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl SymMatrix {
    /// Validates that `m` is square and symmetric up to a 1e-8 relative slack, then symmetrizes.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        dim_check("SymMatrix::new (square)", m.nrows(), m.ncols())?;
        let scale = m.amax().max(1.0);
        let mut asym = 0.0f64;
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if !asym.is_finite() || asym > 1e-8 * scale {
            return Err(Error::NotSymmetric {
                context: "SymMatrix::new".into(),
                asymmetry: asym,
            });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without validation. Panics if `m` is not square.
    pub fn symmetrized(mut m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix must be square");
        symmetrize_in_place(&mut m);
        Self { m }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self {
            m: DMatrix::identity(n, n) * s,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.m.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { m: &self.m * s }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::symmetrized(&self.m + &other.m)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::symmetrized(&self.m - &other.m)
    }

    /// `M S Mᵀ`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Self {
        Self::symmetrized(m * &self.m * m.transpose())
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, Dyn> {
        self.m.clone().symmetric_eigen()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.eigen().eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.eigen().eigenvalues.max()
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.eigen().eigenvalues.amax()
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&self, idx: &[usize]) -> Self {
        let n = idx.len();
        Self {
            m: DMatrix::from_fn(n, n, |i, j| self.m[(idx[i], idx[j])]),
        }
    }

    /// Embeds into a `dim`-sized zero matrix at rows/cols `idx`.
    pub fn embed(&self, idx: &[usize], dim: usize) -> Self {
        let mut out = DMatrix::zeros(dim, dim);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(i, j)] = self.m[(a, b)];
            }
        }
        Self { m: out }
    }

    /// Symmetric PSD square root; negative eigenvalues are clamped to zero.
    pub fn sqrt_psd(&self) -> Self {
        let e = self.eigen();
        let d = e.eigenvalues.map(|l| l.max(0.0).sqrt());
        let q = &e.eigenvectors;
        Self::symmetrized(q * DMatrix::from_diagonal(&d) * q.transpose())
    }

    /// Cholesky factor with the jitter policy.
    pub fn factor(&self) -> Result<PdFactor> {
        PdFactor::new(self)
    }

    pub fn certify_psd(&self) -> Result<PsdCertificate> {
        let min = self.min_eigenvalue();
        let tol = 1e-10 * self.norm();
        if min < -tol {
            return Err(Error::NotPsd {
                context: "certify_psd".into(),
                min_eigenvalue: min,
            });
        }
        Ok(PsdCertificate {
            matrix: self.clone(),
            min_eigenvalue: min,
            jitter_applied: 0.0,
        })
    }
}

/// Evidence that a matrix was found PSD.
#[derive(Clone, Debug)]
pub struct PsdCertificate {
    pub matrix: SymMatrix,
    pub min_eigenvalue: f64,
    pub jitter_applied: f64,
}

/// Cholesky factor `LLᵀ = S + jitter·I`.
#[derive(Clone, Debug)]
pub struct PdFactor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl PdFactor {
    pub fn new(s: &SymMatrix) -> Result<Self> {
        if let Some(chol) = s.m.clone().cholesky() {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let n = s.dim();
        let jitter = JITTER_SCALE * s.trace().abs() / n.max(1) as f64;
        if jitter > 0.0 {
            let shifted = &s.m + DMatrix::identity(n, n) * jitter;
            if let Some(chol) = shifted.cholesky() {
                return Ok(Self { chol, jitter });
            }
        }
        Err(Error::Singular {
            context: format!("PD factorization of a {n}x{n} matrix"),
        })
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> SymMatrix {
        SymMatrix::symmetrized(self.chol.inverse())
    }

    /// `L⁻¹ b`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L⁻¹ X L⁻ᵀ`, similar to `S⁻¹X`.
    pub fn whiten_sym(&self, x: &SymMatrix) -> SymMatrix {
        let z = self.whiten(&x.m);
        SymMatrix::symmetrized(self.whiten(&z.transpose()))
    }
}

/// Factor `F` with `FFᵀ = S`: Cholesky, one jitter retry, then an eigen square root
/// for singular PSD input (e.g. `Σ = 0`).
pub fn psd_factor(s: &SymMatrix) -> DMatrix<f64> {
    match PdFactor::new(s) {
        Ok(f) => f.l(),
        Err(_) => s.sqrt_psd().into_matrix(),
    }
}

fn same_dim(context: &str, a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    dim_check(context, a.dim(), b.dim())
}

/// Smallest eigenvalue of `B − A` with its eigenvector.
pub fn loewner_gap(a: &SymMatrix, b: &SymMatrix) -> Result<(f64, DVector<f64>)> {
    same_dim("loewner_gap", a, b)?;
    if a.dim() == 0 {
        return Ok((0.0, DVector::zeros(0)));
    }
    let e = b.sub(a).eigen();
    let i = e.eigenvalues.imin();
    Ok((e.eigenvalues[i], e.eigenvectors.column(i).into_owned()))
}

/// `A ⪯ B` with relative tolerance `tol·max(1, ‖B‖)`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    let (min, _) = loewner_gap(a, b)?;
    Ok(min >= -tol * b.norm().max(1.0))
}

/// `vᵀC⁻¹v` via a Cholesky solve.
pub fn mahalanobis_sq(v: &DVector<f64>, c: &SymMatrix) -> Result<f64> {
    dim_check("mahalanobis_sq", c.dim(), v.len())?;
    if v.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    let f = c.factor()?;
    let z = f.whiten(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    Ok(z.norm_squared())
}

/// Minimal `b ≥ 0` with `X ⪯ bY`, i.e. `λmax(Y^{-1/2} X Y^{-1/2})`.
pub fn min_dominance_ratio(x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    same_dim("min_dominance_ratio", x, y)?;
    if x.dim() == 0 {
        return Ok(0.0);
    }
    let f = y.factor()?;
    Ok(f.whiten_sym(x).max_eigenvalue().max(0.0))
}

/// Top eigenpair of `Y^{-1/2} X Y^{-1/2}`, with the eigenvector mapped back so that
/// `uᵀXu / uᵀYu` attains the ratio.
pub fn dominance_eigenpair(x: &SymMatrix, y: &SymMatrix) -> Result<(f64, DVector<f64>)> {
    same_dim("dominance_eigenpair", x, y)?;
    let f = y.factor()?;
    let e = f.whiten_sym(x).eigen();
    let i = e.eigenvalues.imax();
    Ok((
        e.eigenvalues[i].max(0.0),
        e.eigenvectors.column(i).into_owned(),
    ))
}

/// Riemannian distance `sqrt(Σ log² λᵢ(PQ⁻¹))`.
pub fn riemannian_delta(p: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    same_dim("riemannian_delta", p, q)?;
    let f = q.factor()?;
    let e = f.whiten_sym(p).eigen();
    let mut s = 0.0;
    for &l in e.eigenvalues.iter() {
        if l <= 0.0 {
            return Err(Error::Singular {
                context: "riemannian_delta".into(),
            });
        }
        s += l.ln().powi(2);
    }
    Ok(s.sqrt())
}

/// Spectral norm of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Serializable view of a Loewner violation.
#[derive(Clone, Debug, Serialize)]
pub struct EigenWitness {
    pub value: f64,
    pub vector: Vec<f64>,
}

impl EigenWitness {
    pub fn new(value: f64, vector: &DVector<f64>) -> Self {
        Self {
            value,
            vector: vector.iter().copied().collect(),
        }
    }
}
