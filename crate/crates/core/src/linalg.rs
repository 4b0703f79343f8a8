//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, Dim, Matrix, RawStorage, SymmetricEigen};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Largest entry modulus.
pub fn max_modulus<T: Scalar, R: Dim, C: Dim, S: RawStorage<T, R, C>>(m: &Matrix<T, R, C, S>) -> f64 {
    m.iter().map(|z| z.modulus()).fold(0.0, f64::max)
}

/// `(A + A*) / 2`.
pub fn hermitian_part<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.adjoint()).unscale(2.0)
}

/// Max entry of `|A - A*|`.
pub fn asymmetry<T: Scalar>(a: &DMatrix<T>) -> f64 {
    max_modulus(&(a - a.adjoint()))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// ascending order.
pub fn sorted_eigen<T: Scalar>(a: &DMatrix<T>) -> (Vec<f64>, DMatrix<T>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Recomposes `V diag(f(λ)) V*`.
pub fn spectral_map<T: Scalar>(values: &[f64], vectors: &DMatrix<T>, f: impl Fn(f64) -> f64) -> DMatrix<T> {
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let w = T::from_real(f(lambda));
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
    }
    scaled * vectors.adjoint()
}

/// Symmetrizes and clamps negative eigenvalues to zero.
///
/// Matrices that are already PSD after symmetrization are returned without
/// being recomposed, so exact input stays exact.
pub fn project_psd<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let h = hermitian_part(a);
    let (values, vectors) = sorted_eigen(&h);
    if values.first().is_none_or(|&v| v >= 0.0) {
        return h;
    }
    hermitian_part(&spectral_map(&values, &vectors, |l| l.max(0.0)))
}

/// Checks Hermitian symmetry relative to the matrix scale.
pub fn ensure_hermitian<T: Scalar>(a: &DMatrix<T>, tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "square matrix",
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    let asym = asymmetry(a);
    if asym > tol * max_modulus(a).max(1.0) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    Ok(())
}
