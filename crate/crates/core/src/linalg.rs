//! Dense symmetric linear algebra used by the relaxation and bound engines:
//! a validated symmetric matrix type, sorted eigendecomposition, and
//! projection onto the positive semidefinite cone.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense symmetric matrix. Symmetry is enforced on construction by averaging
/// with the transpose, so downstream code can rely on `m[(i, j)] == m[(j, i)]`
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from dense data, averaging `m` with its
    /// transpose. Fails on non-square or non-finite input.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m[(i, j)].is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
        }
        let mut data = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            data[(i, i)] = m[(i, i)];
            for j in (i + 1)..m.ncols() {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Ok(Self { data })
    }

    /// Largest absolute difference between `m` and its transpose; useful for
    /// warning about asymmetric input before it is symmetrized away.
    pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: DMatrix::identity(dim, dim),
        }
    }

    /// Builds from a function of (row, col); the value for (i, j) with i <= j
    /// is mirrored to (j, i).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Sets entry (i, j) and its mirror (j, i).
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
        self.data[(j, i)] = v;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.norm()
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// ascending order; `vectors.column(i)` is the eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Full eigendecomposition with eigenvalues ascending.
pub fn sym_eig(m: &SymMatrix) -> SymEig {
    sym_eig_dense(m.as_dmatrix())
}

/// Eigendecomposition of a dense matrix that the caller guarantees is
/// symmetric (only the lower triangle is consulted).
pub fn sym_eig_dense(m: &DMatrix<f64>) -> SymEig {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEig { values, vectors }
}

/// Frobenius-nearest positive semidefinite matrix: eigenvalues are clamped at
/// zero and the matrix is rebuilt from the nonnegative part of its spectrum.
pub fn psd_project(m: &SymMatrix) -> SymMatrix {
    SymMatrix {
        data: psd_project_dense(m.as_dmatrix()),
    }
}

/// In-place-friendly PSD projection on a dense symmetric matrix.
pub fn psd_project_dense(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eig_dense(m);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for idx in 0..n {
        let lam = eig.values[idx];
        if lam <= 0.0 {
            continue;
        }
        let v = eig.vectors.column(idx);
        // out += lam * v v^T, written explicitly to stay allocation-free.
        for j in 0..n {
            let s = lam * v[j];
            for i in 0..n {
                out[(i, j)] += v[i] * s;
            }
        }
    }
    // The spectral rebuild is symmetric up to roundoff; make it exact.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &SymMatrix) -> f64 {
    if m.dim() == 0 {
        return 0.0;
    }
    sym_eig(m).values[0]
}
