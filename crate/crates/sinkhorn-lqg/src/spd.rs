//! Symmetric positive (semi)definite matrix kernels.
//!
//! Every covariance and cost block in the toolkit flows through
//! [`SpdMatrix`]: a dense symmetric matrix, symmetrized on construction and
//! equipped with eigendecomposition-based square root, log-determinant,
//! inverse, and eigenvalue flooring. Positive-(semi)definiteness checks use a
//! scale-relative tolerance of `1e-10 * trace/dim` so large covariances are
//! not spuriously rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymmetry beyond this relative tolerance is rejected as a likely
/// transposition bug; anything below is silently symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Scale-relative eigenvalue tolerance for semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-10;

/// Dense symmetric matrix, the currency of covariances and quadratic costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
}

impl SpdMatrix {
    /// Builds from a square matrix, symmetrizing the input. Relative
    /// asymmetry above [`SYMMETRY_TOL`] is an error.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimMismatch(format!(
                "expected square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let skew = (&mat - mat.transpose()).norm();
        let scale = mat.norm().max(f64::MIN_POSITIVE);
        if skew / scale > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(skew / scale));
        }
        Ok(Self {
            mat: sym_project(&mat),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            mat: DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
        }
    }

    /// Identity scaled by `c`.
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim) * c,
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    /// Threshold below which an eigenvalue counts as negative, relative to
    /// the matrix scale: `1e-10 * trace/dim`.
    pub fn psd_threshold(&self) -> f64 {
        PSD_TOL * (self.trace() / self.dim() as f64)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (vals, _) = self.sym_eigen();
        vals.min()
    }

    /// Eigendecomposition of the symmetric matrix: `(values, vectors)` with
    /// `self = vectors * diag(values) * vectors^T`.
    pub fn sym_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = self.mat.clone().symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -self.psd_threshold()
    }

    pub fn is_pd(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    pub fn ensure_psd(&self) -> Result<()> {
        let min_eig = self.min_eigenvalue();
        let tol = self.psd_threshold();
        if min_eig < -tol {
            return Err(Error::NotPsd { min_eig, tol });
        }
        Ok(())
    }

    pub fn ensure_pd(&self) -> Result<()> {
        let min_eig = self.min_eigenvalue();
        if min_eig <= 0.0 {
            return Err(Error::NotPd(min_eig));
        }
        Ok(())
    }

    /// Symmetric PSD square root `S` with `S * S = self`.
    ///
    /// Eigenvalues within the PSD tolerance of zero are clamped to zero
    /// before taking the root; a genuinely negative spectrum is an error.
    pub fn sqrt(&self) -> Result<SpdMatrix> {
        let (vals, vecs) = self.sym_eigen();
        let tol = self.psd_threshold();
        let mut roots = DVector::zeros(self.dim());
        for (i, &v) in vals.iter().enumerate() {
            if v < -tol {
                return Err(Error::NotPsd { min_eig: v, tol });
            }
            roots[i] = v.max(0.0).sqrt();
        }
        Ok(Self {
            mat: sym_project(&(&vecs * DMatrix::from_diagonal(&roots) * vecs.transpose())),
        })
    }

    /// Log-determinant of a positive definite matrix.
    pub fn logdet(&self) -> Result<f64> {
        let (vals, _) = self.sym_eigen();
        let mut acc = 0.0;
        for &v in vals.iter() {
            if v <= 0.0 {
                return Err(Error::NotPd(v));
            }
            acc += v.ln();
        }
        Ok(acc)
    }

    /// Inverse of a positive definite matrix.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let (vals, vecs) = self.sym_eigen();
        let mut inv_vals = DVector::zeros(self.dim());
        for (i, &v) in vals.iter().enumerate() {
            if v <= 0.0 {
                return Err(Error::NotPd(v));
            }
            inv_vals[i] = 1.0 / v;
        }
        Ok(Self {
            mat: sym_project(&(&vecs * DMatrix::from_diagonal(&inv_vals) * vecs.transpose())),
        })
    }

    /// Inverse square root of a positive definite matrix.
    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        let (vals, vecs) = self.sym_eigen();
        let mut inv_roots = DVector::zeros(self.dim());
        for (i, &v) in vals.iter().enumerate() {
            if v <= 0.0 {
                return Err(Error::NotPd(v));
            }
            inv_roots[i] = 1.0 / v.sqrt();
        }
        Ok(Self {
            mat: sym_project(&(&vecs * DMatrix::from_diagonal(&inv_roots) * vecs.transpose())),
        })
    }

    /// Clips eigenvalues below `floor` up to `floor`. Idempotent.
    pub fn psd_floor(&self, floor: f64) -> SpdMatrix {
        let (vals, vecs) = self.sym_eigen();
        let clipped = vals.map(|v| v.max(floor));
        Self {
            mat: sym_project(&(&vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose())),
        }
    }

    /// Cholesky lower factor; `None` when the matrix is not numerically PD.
    pub fn cholesky_lower(&self) -> Option<DMatrix<f64>> {
        self.mat.clone().cholesky().map(|c| c.l())
    }
}

/// Symmetric part `(A + A^T) / 2` of a square matrix.
pub fn sym_project(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Row-major nested-array view of a matrix, the JSON wire format.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parses a row-major nested array into a matrix; rows must be equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::DimMismatch("empty matrix".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimMismatch("ragged or empty matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl TryFrom<Vec<Vec<f64>>> for SpdMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SpdMatrix::new(matrix_from_rows(&rows)?)
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(m: SpdMatrix) -> Self {
        matrix_to_rows(&m.mat)
    }
}
