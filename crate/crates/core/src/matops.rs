//! Symmetric-matrix and spectral primitives.
//!
//! Everything downstream works with dense `f64` matrices from `nalgebra`.
//! [`SymMatrix`] is the exactly-symmetric wrapper used for Lyapunov and cost
//! matrices; semidefiniteness tests use a relative tolerance of
//! `1e-9 * max(1, ||S||_2)` unless the caller passes one explicitly.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

const EIG_MAX_ITER: usize = 10_000;

/// Relative factor of the default semidefiniteness tolerance.
pub const PSD_REL_TOL: f64 = 1e-9;

/// Dense symmetric matrix. The stored entries are exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Symmetrizes `m`; errors when `m` is not square.
    pub fn new(m: Matrix) -> Result<Self> {
        symmetrize(&m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Wraps a matrix already known to be symmetric, forcing exact symmetry.
    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        let mut s = m;
        symmetrize_in_place(&mut s);
        SymMatrix(s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut vals: Vec<f64> = symmetric_eigen(&self.0)?.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("non-empty matrix"))
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn norm2(&self) -> Result<f64> {
        let vals = self.eigenvalues()?;
        Ok(vals[0].abs().max(vals[vals.len() - 1].abs()))
    }

    /// Default semidefiniteness tolerance for this matrix.
    pub fn default_tol(&self) -> Result<f64> {
        Ok(PSD_REL_TOL * self.norm2()?.max(1.0))
    }

    /// Matrix absolute value `S+ - S-`.
    pub fn abs(&self) -> Result<SymMatrix> {
        let split = psd_split(self)?;
        Ok(SymMatrix(split.plus.0 - split.minus.0))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0)
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(&self.0).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        let m = from_rows(&rows).map_err(serde::de::Error::custom)?;
        SymMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Positive and negative semidefinite parts of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct PsdSplit {
    pub plus: SymMatrix,
    pub minus: SymMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenEigResult {
    pub lambda_max: f64,
}

/// Returns `(M + M^T) / 2`.
pub fn symmetrize(m: &Matrix) -> Result<SymMatrix> {
    if !m.is_square() {
        return Err(Error::dim(format!(
            "symmetrize expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut s = m.clone();
    symmetrize_in_place(&mut s);
    Ok(SymMatrix(s))
}

fn symmetrize_in_place(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER).ok_or(Error::EigenNonConvergence)
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dim(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    match m.nrows() {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        2 => Ok(spectral_radius_2x2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])),
        _ => {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite matrix entry in eigenproblem"));
            }
            let schur =
                Schur::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER).ok_or(Error::EigenNonConvergence)?;
            Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max))
        }
    }
}

fn spectral_radius_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    // discriminant written to avoid cancellation in half_tr^2 - det
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc < 0.0 {
        return det.abs().sqrt();
    }
    let root = disc.sqrt();
    let big = if half_tr >= 0.0 { half_tr + root } else { half_tr - root };
    if big == 0.0 {
        return 0.0;
    }
    let small = det / big;
    big.abs().max(small.abs())
}

/// Splits `S` into `S+` (nonnegative eigenvalues) and `S-` (negative eigenvalues).
pub fn psd_split(s: &SymMatrix) -> Result<PsdSplit> {
    let n = s.dim();
    let eig = symmetric_eigen(&s.0)?;
    let mut plus = Matrix::zeros(n, n);
    let mut minus = Matrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let dyad = &v * v.transpose() * lambda;
        if lambda >= 0.0 {
            plus += dyad;
        } else {
            minus += dyad;
        }
    }
    Ok(PsdSplit {
        plus: SymMatrix::from_matrix_unchecked(plus),
        minus: SymMatrix::from_matrix_unchecked(minus),
    })
}

/// `true` iff the smallest eigenvalue of `S` is at least `-tol`.
pub fn is_psd(s: &SymMatrix, tol: f64) -> Result<bool> {
    Ok(s.min_eigenvalue()? >= -tol)
}

/// [`is_psd`] with the default relative tolerance.
pub fn is_psd_default(s: &SymMatrix) -> Result<bool> {
    let vals = s.eigenvalues()?;
    let norm = vals[0].abs().max(vals[vals.len() - 1].abs());
    Ok(vals[0] >= -PSD_REL_TOL * norm.max(1.0))
}

/// Largest generalized eigenvalue of the symmetric-definite pencil `(lhs, rhs)`.
///
/// Whitens with the Cholesky factor `rhs = L L^T` and returns the largest
/// eigenvalue of `L^-1 lhs L^-T`, so that `lambda_max * rhs - lhs` is PSD and tight.
pub fn gen_eig_max(lhs: &SymMatrix, rhs: &SymMatrix) -> Result<GenEigResult> {
    if lhs.dim() != rhs.dim() {
        return Err(Error::dim(format!(
            "pencil matrices are {}x{} and {}x{}",
            lhs.dim(),
            lhs.dim(),
            rhs.dim(),
            rhs.dim()
        )));
    }
    let rhs_eigs = rhs.eigenvalues()?;
    let (lo, hi) = (rhs_eigs[0], rhs_eigs[rhs_eigs.len() - 1]);
    if !(hi > 0.0 && lo > 1e-12 * hi) {
        return Err(Error::SingularPencil);
    }
    let chol = rhs.0.clone().cholesky().ok_or(Error::SingularPencil)?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(&lhs.0)
        .ok_or(Error::SingularPencil)?;
    let whitened = l
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::SingularPencil)?;
    let w = SymMatrix::from_matrix_unchecked(whitened);
    Ok(GenEigResult {
        lambda_max: w.max_eigenvalue()?,
    })
}

/// Kronecker product `M ⊗ N`.
///
/// With column-stacking `vec`, `vec(M^T X M) = (M^T ⊗ M^T) vec(X)`.
pub fn kron(m: &Matrix, n: &Matrix) -> Matrix {
    m.kronecker(n)
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for an `n x n` matrix.
pub fn unvec(v: &DVector<f64>, n: usize) -> Matrix {
    Matrix::from_column_slice(n, n, v.as_slice())
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested rows. An empty outer list is an error.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::dim("matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::dim("matrix has no columns"));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::dim(format!(
            "row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix entries must be finite"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}
