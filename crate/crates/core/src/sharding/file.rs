//! Little-endian matrix files: `CUBE3D\0`, version byte, dtype byte,
//! `u64` rows, `u64` cols, then row-major elements.

use std::path::Path;

use super::GlobalMatrix;
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};

const MAGIC: &[u8; 7] = b"CUBE3D\0";
const VERSION: u8 = 1;
const HEADER: usize = 7 + 1 + 1 + 8 + 8;

/// A decoded matrix file in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFile {
    F64(GlobalMatrix<f64>),
    F32(GlobalMatrix<f32>),
}

impl MatrixFile {
    pub fn dtype(&self) -> Dtype {
        match self {
            MatrixFile::F64(_) => Dtype::F64,
            MatrixFile::F32(_) => Dtype::F32,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixFile::F64(m) => m.shape(),
            MatrixFile::F32(m) => m.shape(),
        }
    }

    /// Widened copy; exact for both precisions.
    pub fn to_f64(&self) -> GlobalMatrix<f64> {
        match self {
            MatrixFile::F64(m) => m.clone(),
            MatrixFile::F32(m) => m.map(|v| v as f64),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            MatrixFile::F64(m) => encode(m),
            MatrixFile::F32(m) => encode(m),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<MatrixFile> {
        if bytes.len() < HEADER {
            return Err(Error::Format(format!(
                "file is {} bytes, header needs {HEADER}",
                bytes.len()
            )));
        }
        if &bytes[..7] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes[7] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[7])));
        }
        let dtype =
            Dtype::from_code(bytes[8]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", bytes[8])))?;
        let rows = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
        let cols = u64::from_le_bytes(bytes[17..25].try_into().expect("8 bytes"));
        let count = rows
            .checked_mul(cols)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format(format!("{rows}x{cols} is too large")))?;
        let body = &bytes[HEADER..];
        if Some(body.len()) != count.checked_mul(dtype.size()) {
            return Err(Error::Format(format!(
                "{rows}x{cols} {dtype:?} needs {} payload bytes, found {}",
                count.saturating_mul(dtype.size()),
                body.len()
            )));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        Ok(match dtype {
            Dtype::F64 => MatrixFile::F64(decode_body(rows, cols, body)?),
            Dtype::F32 => MatrixFile::F32(decode_body(rows, cols, body)?),
        })
    }
}

impl From<GlobalMatrix<f64>> for MatrixFile {
    fn from(m: GlobalMatrix<f64>) -> Self {
        MatrixFile::F64(m)
    }
}

impl From<GlobalMatrix<f32>> for MatrixFile {
    fn from(m: GlobalMatrix<f32>) -> Self {
        MatrixFile::F32(m)
    }
}

fn encode<T: Scalar>(m: &GlobalMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + m.data().len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        v.write_le(&mut out);
    }
    out
}

fn decode_body<T: Scalar>(rows: usize, cols: usize, body: &[u8]) -> Result<GlobalMatrix<T>> {
    let data = body.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    GlobalMatrix::from_vec(rows, cols, data)
}

pub fn write_matrix_file<T: Scalar>(path: impl AsRef<Path>, m: &GlobalMatrix<T>) -> Result<()> {
    std::fs::write(path, encode(m))?;
    Ok(())
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<MatrixFile> {
    MatrixFile::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = GlobalMatrix::from_fn(3, 2, |r, c| (r as f64 - 1.25) * 1e-300 + c as f64 * f64::MIN_POSITIVE);
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER + 6 * 8);
        assert_eq!(&bytes[..9], b"CUBE3D\0\x01\x00");
        assert_eq!(MatrixFile::decode(&bytes).unwrap(), MatrixFile::F64(m));

        let f = GlobalMatrix::from_fn(1, 3, |_, c| -(c as f32) / 3.0);
        let back = MatrixFile::decode(&encode(&f)).unwrap();
        assert_eq!(back.dtype(), Dtype::F32);
        assert_eq!(back, MatrixFile::F32(f));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = encode(&GlobalMatrix::<f64>::zeros(2, 2));
        assert!(MatrixFile::decode(&good[..10]).is_err());
        assert!(MatrixFile::decode(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(MatrixFile::decode(&bad).is_err());
        let mut bad = good.clone();
        bad[7] = 2;
        assert!(MatrixFile::decode(&bad).is_err());
        let mut bad = good;
        bad[8] = 9;
        assert!(matches!(MatrixFile::decode(&bad), Err(Error::Format(_))));
    }
}
