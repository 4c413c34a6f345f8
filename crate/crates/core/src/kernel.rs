//! Serial local products.
//!
//! Every output entry is accumulated from zero with the contraction index
//! ascending, whatever the loop order. The serial references use the same
//! kernels, so a one-rank cube reproduces them bit for bit.

use crate::scalar::Scalar;

/// `C (m×n) = A (m×k) · B (k×n)`.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

/// `C (m×n) = A (m×k) · Bᵀ` with `B` stored `n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c.push(acc);
        }
    }
    c
}

/// `C (m×n) = Aᵀ · B` with `A` stored `k×m` and `B` stored `k×n`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            for (cv, &bv) in c[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
    c
}

/// Row-major transpose of an `rows × cols` buffer.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        m: usize,
        k: usize,
        n: usize,
        a: impl Fn(usize, usize) -> f64,
        b: impl Fn(usize, usize) -> f64,
    ) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a(i, kk) * b(kk, j);
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn all_forms_agree_bitwise_with_the_ascending_sum() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, |i, kk| a[i * k + kk], |kk, j| b[kk * n + j]);
        assert_eq!(gemm_nn(m, k, n, &a, &b), want);
        let bt = transpose(k, n, &b);
        assert_eq!(gemm_nt(m, k, n, &a, &bt), want);
        let at = transpose(m, k, &a);
        assert_eq!(gemm_tn(m, k, n, &at, &b), want);
    }

    #[test]
    fn empty_contraction_gives_zeros() {
        assert_eq!(gemm_nn::<f64>(2, 0, 2, &[], &[]), vec![0.0; 4]);
    }
}
