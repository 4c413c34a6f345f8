use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense row-major matrix held in one place (test, CLI or oracle side).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> GlobalMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "GlobalMatrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(GlobalMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        GlobalMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        GlobalMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> GlobalMatrix<U> {
        GlobalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the half-open sub-block `rows × cols`.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<T> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            out.extend_from_slice(&self.data[r * self.cols + cols.start..r * self.cols + cols.end]);
        }
        out
    }

    /// Zero-pads up to the next multiples of `row_multiple` and `col_multiple`.
    ///
    /// Partitioning never pads on its own; call this first if a shape must be
    /// made divisible. Padding breaks the exact balance and cost identities.
    pub fn zero_padded(&self, row_multiple: usize, col_multiple: usize) -> Self {
        let rows = self.rows.next_multiple_of(row_multiple.max(1));
        let cols = self.cols.next_multiple_of(col_multiple.max(1));
        Self::from_fn(rows, cols, |r, c| {
            if r < self.rows && c < self.cols {
                self.get(r, c)
            } else {
                T::zero()
            }
        })
    }
}
