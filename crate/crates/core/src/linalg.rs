//! Thin wrappers over LAPACK for the handful of dense operations the crate
//! needs, plus small helpers on complex matrices.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eig, Eigh, EigValsh, Inverse, LeastSquaresSvd, Solve, SVD, UPLO};
use num_complex::Complex64 as C64;

use crate::error::LinalgError;

pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(n: usize, m: usize) -> CMatrix {
    Array2::zeros((n, m))
}

pub fn identity(n: usize) -> CMatrix {
    Array2::eye(n)
}

/// Conjugate transpose.
pub fn dagger(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

/// Largest entrywise modulus.
pub fn max_abs(m: ArrayView2<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: ArrayView2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + &dagger(m)).mapv(|z| z * 0.5)
}

pub fn trace(m: ArrayView2<C64>) -> C64 {
    m.diag().sum()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigvalsh(m: &CMatrix) -> Result<Array1<f64>, LinalgError> {
    m.eigvalsh(UPLO::Lower)
        .map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// Eigen-decomposition of a Hermitian matrix: `(values, vectors)` with
/// eigenvectors in the columns.
pub fn eigh(m: &CMatrix) -> Result<(Array1<f64>, CMatrix), LinalgError> {
    m.eigh(UPLO::Lower)
        .map_err(|e| LinalgError::Lapack(e.to_string()))
}

pub fn solve(a: &CMatrix, b: &CVector) -> Result<CVector, LinalgError> {
    a.solve(b).map_err(|e| LinalgError::Lapack(e.to_string()))
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    a.inv().map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// Eigenvalues of a general complex matrix.
pub fn eigvals(m: &CMatrix) -> Result<CVector, LinalgError> {
    m.eig().map(|(w, _)| w).map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// Singular values and right singular vectors (as rows of `V^\dagger`).
pub fn svd_right(m: &CMatrix) -> Result<(Array1<f64>, CMatrix), LinalgError> {
    let (_, s, vt) = m.svd(false, true).map_err(|e| LinalgError::Lapack(e.to_string()))?;
    Ok((s, vt.expect("requested right singular vectors")))
}

/// Minimum-norm least-squares solution of `a x = b` for each column of `b`.
pub fn lstsq<T>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>, LinalgError>
where
    T: ndarray_linalg::Scalar + ndarray_linalg::Lapack,
{
    a.least_squares(b)
        // Copy out: degenerate results can carry zero strides that LAPACK rejects.
        .map(|r| Array2::from_shape_fn(r.solution.dim(), |ij| r.solution[ij]))
        .map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// Solve a small real linear system.
pub fn solve_real(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    a.solve(b).map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn unitary_propagator(h: &CMatrix, t: f64) -> Result<CMatrix, LinalgError> {
    let (w, v) = eigh(h)?;
    let phases = w.mapv(|e| (-I * e * t).exp());
    Ok(scale_columns(&v, &phases).dot(&dagger(&v)))
}

/// `exp(-beta h) / Z` for Hermitian `h`.
pub fn gibbs(h: &CMatrix, beta: f64) -> Result<CMatrix, LinalgError> {
    let (w, v) = eigh(h)?;
    let e0 = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let p = w.mapv(|e| (-beta * (e - e0)).exp());
    let z = p.sum();
    Ok(scale_columns(&v, &p.mapv(|x| C64::new(x / z, 0.0))).dot(&dagger(&v)))
}

/// Multiply column `j` of `m` by `s[j]`.
pub fn scale_columns(m: &CMatrix, s: &CVector) -> CMatrix {
    let mut out = m.clone();
    for (mut col, f) in out.columns_mut().into_iter().zip(s.iter()) {
        col.mapv_inplace(|z| z * f);
    }
    out
}

/// Kronecker product.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    ndarray::linalg::kron(a, b)
}

pub fn pauli_x() -> CMatrix {
    ndarray::array![[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]]
}

pub fn pauli_y() -> CMatrix {
    ndarray::array![[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]]
}

pub fn pauli_z() -> CMatrix {
    ndarray::array![[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]]
}

/// `|i><j|` in dimension `n`.
pub fn matrix_unit(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = zeros(n, n);
    m[[i, j]] = c(1.0, 0.0);
    m
}

pub fn from_real(m: &Array2<f64>) -> CMatrix {
    m.mapv(|x| c(x, 0.0))
}
