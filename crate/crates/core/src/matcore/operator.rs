use nalgebra::{DMatrix, DVector};

use super::SymMatrix;

/// Compressed sparse row matrix. Column indices are sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from triplets; duplicates are summed and explicit zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                rows.push(i);
                last = Some((i, j));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((i, j), v) in rows.iter().zip(indices).zip(values) {
            if v != 0.0 {
                indptr[i + 1] += 1;
                keep_idx.push(j);
                keep_val.push(v);
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices: keep_idx,
            values: keep_val,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let t: Vec<_> = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(diag.len(), diag.len(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_fn(self.nrows, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    /// `self · M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for i in 0..self.nrows {
                out[(i, c)] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        out
    }

    /// `M · selfᵀ`, computed as column axpys.
    pub fn dense_mul_t(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.ncols);
        let mut out = DMatrix::zeros(m.nrows(), self.nrows);
        for r in 0..self.nrows {
            let mut col = out.column_mut(r);
            for (j, v) in self.row(r) {
                col.axpy(v, &m.column(j), 1.0);
            }
        }
        out
    }

    /// Sparse product `self · other`.
    pub fn mul_sparse(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut seen = vec![false; other.ncols];
        let mut touched = Vec::new();
        let mut t = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !seen[j] {
                        seen[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                t.push((i, j, acc[j]));
                acc[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
        }
        Csr::from_triplets(self.nrows, other.ncols, &t)
    }

    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let t: Vec<_> = self.triplets().chain(other.triplets()).collect();
        Csr::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Submatrix on the given rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Csr {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (b, &j) in cols.iter().enumerate() {
            col_map[j] = b;
        }
        let mut t = Vec::new();
        for (a, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_map[j] != usize::MAX {
                    t.push((a, col_map[j], v));
                }
            }
        }
        Csr::from_triplets(rows.len(), cols.len(), &t)
    }
}

/// A linear map stored dense or sparse. Used for `A`, `Σ` and `D_S` so that the
/// structured RKF path can avoid d×d products.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Dense(DMatrix<f64>),
    Sparse(Csr),
}

impl From<DMatrix<f64>> for Operator {
    fn from(m: DMatrix<f64>) -> Self {
        Operator::Dense(m)
    }
}

impl From<Csr> for Operator {
    fn from(m: Csr) -> Self {
        Operator::Sparse(m)
    }
}

impl From<&SymMatrix> for Operator {
    fn from(m: &SymMatrix) -> Self {
        Operator::Dense(m.as_matrix().clone())
    }
}

impl Operator {
    pub fn diagonal(diag: &[f64]) -> Self {
        Operator::Sparse(Csr::diagonal(diag))
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Operator::Sparse(Csr::from_triplets(nrows, ncols, &[]))
    }

    pub fn nrows(&self) -> usize {
        match self {
            Operator::Dense(m) => m.nrows(),
            Operator::Sparse(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Operator::Dense(m) => m.ncols(),
            Operator::Sparse(m) => m.ncols(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Operator::Sparse(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Operator::Dense(m) => m.clone(),
            Operator::Sparse(m) => m.to_dense(),
        }
    }

    /// Dense symmetric copy; callers use this only for operators that are symmetric.
    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix::symmetrized(self.to_dense())
    }

    pub fn transpose(&self) -> Self {
        match self {
            Operator::Dense(m) => Operator::Dense(m.transpose()),
            Operator::Sparse(m) => Operator::Sparse(m.transpose()),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Operator::Dense(m) => Operator::Dense(m * s),
            Operator::Sparse(m) => Operator::Sparse(m.scaled(s)),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense(m) => m * x,
            Operator::Sparse(m) => m.mul_vec(x),
        }
    }

    /// `self · M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Operator::Dense(a) => a * m,
            Operator::Sparse(a) => a.mul_dense(m),
        }
    }

    /// `M · selfᵀ`.
    pub fn dense_mul_t(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Operator::Dense(a) => m * a.transpose(),
            Operator::Sparse(a) => a.dense_mul_t(m),
        }
    }

    /// `self · S · selfᵀ`.
    pub fn sandwich(&self, s: &SymMatrix) -> SymMatrix {
        let t = self.mul_dense(s.as_matrix());
        SymMatrix::symmetrized(self.dense_mul_t(&t))
    }

    /// `self · other`, sparse when both are sparse.
    pub fn mul(&self, other: &Operator) -> Operator {
        match (self, other) {
            (Operator::Sparse(a), Operator::Sparse(b)) => Operator::Sparse(a.mul_sparse(b)),
            (a, b) => Operator::Dense(a.mul_dense(&b.to_dense())),
        }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        match (self, other) {
            (Operator::Sparse(a), Operator::Sparse(b)) => Operator::Sparse(a.add(b)),
            (a, b) => Operator::Dense(a.to_dense() + b.to_dense()),
        }
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Operator {
        match self {
            Operator::Dense(m) => {
                Operator::Dense(DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
                    m[(rows[a], cols[b])]
                }))
            }
            Operator::Sparse(m) => Operator::Sparse(m.select(rows, cols)),
        }
    }

    /// Places `self` (rows/cols indexed by `idx`) inside a `dim × dim` zero operator.
    pub fn embed(&self, idx: &[usize], dim: usize) -> Operator {
        match self {
            Operator::Dense(m) => {
                let mut out = DMatrix::zeros(dim, dim);
                for (a, &i) in idx.iter().enumerate() {
                    for (b, &j) in idx.iter().enumerate() {
                        out[(i, j)] = m[(a, b)];
                    }
                }
                Operator::Dense(out)
            }
            Operator::Sparse(m) => {
                let t: Vec<_> = m.triplets().map(|(a, b, v)| (idx[a], idx[b], v)).collect();
                Operator::Sparse(Csr::from_triplets(dim, dim, &t))
            }
        }
    }

    /// True when the `rows × cols` block is exactly zero.
    pub fn block_is_zero(&self, rows: &[usize], cols: &[usize]) -> bool {
        match self {
            Operator::Dense(m) => rows.iter().all(|&i| cols.iter().all(|&j| m[(i, j)] == 0.0)),
            Operator::Sparse(m) => m.select(rows, cols).nnz() == 0,
        }
    }

    pub fn amax(&self) -> f64 {
        match self {
            Operator::Dense(m) => m.amax(),
            Operator::Sparse(m) => m.values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        }
    }
}
