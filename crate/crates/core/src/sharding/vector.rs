use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::{Coords, CubeTopology};

/// A length-`N` vector stored on the `j == l` diagonal of the cube.
///
/// Rank `(i, j, j)` holds `b[j·np + i·n .. +n]` with `n = N/p²`; every other
/// rank holds nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalVector<T> {
    global_len: usize,
    p: usize,
    coords: Coords,
    slice: Option<Vec<T>>,
}

/// Slice of a length-`len` diagonal vector held at `c`, if any.
pub fn diagonal_bounds(c: Coords, len: usize, p: usize) -> Option<Range<usize>> {
    if c.j != c.l {
        return None;
    }
    let n = len / (p * p);
    let start = c.j * n * p + c.i * n;
    Some(start..start + n)
}

fn check_len(len: usize, p: usize) -> Result<()> {
    if !len.is_multiple_of(p * p) {
        return Err(Error::IndivisibleShape {
            dim: "len",
            value: len,
            divisor: p * p,
        });
    }
    Ok(())
}

impl<T: Scalar> DiagonalVector<T> {
    /// Wraps a rank's local slice. `slice` must be present exactly on diagonal ranks.
    pub fn from_local(global_len: usize, p: usize, coords: Coords, slice: Option<Vec<T>>) -> Result<Self> {
        check_len(global_len, p)?;
        match (diagonal_bounds(coords, global_len, p), &slice) {
            (Some(r), Some(s)) if r.len() == s.len() => {}
            (None, None) => {}
            (Some(r), Some(s)) => {
                return Err(Error::LengthMismatch {
                    op: "DiagonalVector::from_local",
                    expected: r.len(),
                    got: s.len(),
                })
            }
            (Some(_), None) => {
                return Err(Error::InconsistentFamily(format!(
                    "diagonal rank {coords} holds no slice"
                )))
            }
            (None, Some(_)) => {
                return Err(Error::InconsistentFamily(format!(
                    "off-diagonal rank {coords} holds a slice"
                )))
            }
        }
        Ok(DiagonalVector {
            global_len,
            p,
            coords,
            slice,
        })
    }

    pub fn global_len(&self) -> usize {
        self.global_len
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn coords(&self) -> Coords {
        self.coords
    }

    pub fn is_diagonal(&self) -> bool {
        self.coords.j == self.coords.l
    }

    pub fn slice(&self) -> Option<&[T]> {
        self.slice.as_deref()
    }

    pub fn bounds(&self) -> Option<Range<usize>> {
        diagonal_bounds(self.coords, self.global_len, self.p)
    }
}

/// Splits `b` onto the diagonal ranks (one entry per rank, indexed by rank).
pub fn partition_vector<T: Scalar>(b: &[T], topo: &CubeTopology) -> Result<Vec<DiagonalVector<T>>> {
    let p = topo.side();
    check_len(b.len(), p)?;
    (0..topo.ranks())
        .map(|rank| {
            let c = topo.coords_of(rank)?;
            Ok(DiagonalVector {
                global_len: b.len(),
                p,
                coords: c,
                slice: diagonal_bounds(c, b.len(), p).map(|r| b[r].to_vec()),
            })
        })
        .collect()
}

pub fn collect_vector<T: Scalar>(family: &[DiagonalVector<T>]) -> Result<Vec<T>> {
    let first = family
        .first()
        .ok_or_else(|| Error::InconsistentFamily("no shards".into()))?;
    let topo = CubeTopology::with_side(first.p)?;
    if family.len() != topo.ranks() {
        return Err(Error::InconsistentFamily(format!(
            "{} vector shards for {} ranks",
            family.len(),
            topo.ranks()
        )));
    }
    let mut out = vec![T::zero(); first.global_len];
    for (rank, v) in family.iter().enumerate() {
        if v.p != first.p || v.global_len != first.global_len || topo.rank_of(v.coords)? != rank {
            return Err(Error::InconsistentFamily(format!(
                "vector shard {rank} does not match the family"
            )));
        }
        match (v.bounds(), &v.slice) {
            (Some(r), Some(s)) if r.len() == s.len() => out[r].copy_from_slice(s),
            (None, None) => {}
            _ => {
                return Err(Error::InconsistentFamily(format!(
                    "rank {} has the wrong slice for its diagonal status",
                    v.coords
                )))
            }
        }
    }
    Ok(out)
}
