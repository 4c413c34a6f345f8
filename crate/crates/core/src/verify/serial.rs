//! Single-process references.

use crate::error::Result;
use crate::kernel;
use crate::ops3d::Form;
use crate::scalar::Scalar;
use crate::sharding::GlobalMatrix;

/// Dense product in the given form, summing the contraction index ascending.
pub fn serial_matmul<T: Scalar>(a: &GlobalMatrix<T>, b: &GlobalMatrix<T>, form: Form) -> Result<GlobalMatrix<T>> {
    let (m, n) = form.output_shape(a.shape(), b.shape())?;
    let data = match form {
        Form::Ab => kernel::gemm_nn(m, a.cols(), n, a.data(), b.data()),
        Form::Abt => kernel::gemm_nt(m, a.cols(), n, a.data(), b.data()),
        Form::Atb => kernel::gemm_tn(m, a.rows(), n, a.data(), b.data()),
    };
    GlobalMatrix::from_vec(m, n, data)
}

/// `A + b` with `b` added to every row.
pub fn serial_add_vec<T: Scalar>(a: &GlobalMatrix<T>, b: &[T]) -> GlobalMatrix<T> {
    GlobalMatrix::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) + b[c])
}

/// `A ⊙ b` with every row scaled by `b`.
pub fn serial_mul_vec<T: Scalar>(a: &GlobalMatrix<T>, b: &[T]) -> GlobalMatrix<T> {
    GlobalMatrix::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) * b[c])
}

/// Per-column sums, rows ascending.
pub fn column_sums<T: Scalar>(a: &GlobalMatrix<T>) -> Vec<T> {
    let mut s = vec![T::zero(); a.cols()];
    for r in 0..a.rows() {
        for (acc, &v) in s.iter_mut().zip(a.row(r)) {
            *acc += v;
        }
    }
    s
}
