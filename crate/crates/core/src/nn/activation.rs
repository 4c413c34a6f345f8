use super::config::GroupState;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sharding::{collect, partition, GlobalMatrix, Layout, ShardedMatrix};
use crate::topology::CubeTopology;

/// Row of token `(batch_idx, seq_idx)` in the flattened activation matrix.
///
/// Rows are ordered (batch block, sequence block, batch within block,
/// position within block), so each rank's row slab is one `[b/p, s/p]` tile.
pub fn flat_row(batch_idx: usize, seq_idx: usize, batch: usize, seq: usize, p: usize) -> usize {
    let (bp, sp) = (batch / p, seq / p);
    let (w, bb) = (batch_idx / bp, batch_idx % bp);
    let (a, ss) = (seq_idx / sp, seq_idx % sp);
    w * bp * seq + a * bp * sp + bb * sp + ss
}

/// One rank's `[b/p, s/p, W/p]` tile of a `[b, s, W]` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation3D<T> {
    x: ShardedMatrix<T>,
    batch: usize,
    seq: usize,
}

impl<T: Scalar> Activation3D<T> {
    pub fn from_shard(x: ShardedMatrix<T>, batch: usize, seq: usize) -> Result<Self> {
        let p = x.side();
        if x.layout() != Layout::Input {
            return Err(Error::LayoutMismatch(format!(
                "activations use the input layout, got {:?}",
                x.layout()
            )));
        }
        GroupState::of(x.directions())?;
        if !batch.is_multiple_of(p) || !seq.is_multiple_of(p) || x.global_shape().0 != batch * seq {
            return Err(Error::ShapeMismatch(format!(
                "{} rows cannot hold batch {batch} x seq {seq} on side {p}",
                x.global_shape().0
            )));
        }
        Ok(Activation3D { x, batch, seq })
    }

    /// Splits a naturally ordered `b·s × W` matrix (row `batch·s + seq`).
    pub fn distribute(
        natural: &GlobalMatrix<T>,
        batch: usize,
        seq: usize,
        group: GroupState,
        topo: &CubeTopology,
    ) -> Result<Vec<Self>> {
        let p = topo.side();
        if natural.rows() != batch * seq {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for batch {batch} x seq {seq}",
                natural.rows()
            )));
        }
        if !batch.is_multiple_of(p) || !seq.is_multiple_of(p) {
            return Err(Error::IndivisibleShape {
                dim: if !batch.is_multiple_of(p) { "batch" } else { "seq" },
                value: if !batch.is_multiple_of(p) { batch } else { seq },
                divisor: p,
            });
        }
        let mut flat = GlobalMatrix::zeros(natural.rows(), natural.cols());
        for b in 0..batch {
            for s in 0..seq {
                let r = flat_row(b, s, batch, seq, p);
                flat.data_mut()[r * natural.cols()..(r + 1) * natural.cols()].copy_from_slice(natural.row(b * seq + s));
            }
        }
        partition(&flat, Layout::Input, group.directions(), topo)?
            .into_iter()
            .map(|x| Activation3D::from_shard(x, batch, seq))
            .collect()
    }

    /// Inverse of [`distribute`](Self::distribute).
    pub fn collect(family: &[Self]) -> Result<GlobalMatrix<T>> {
        let first = family
            .first()
            .ok_or_else(|| Error::InconsistentFamily("no activations".into()))?;
        let shards: Vec<_> = family.iter().map(|a| a.x.clone()).collect();
        let flat = collect(&shards)?;
        let (batch, seq, p) = (first.batch, first.seq, first.x.side());
        let cols = flat.cols();
        let mut natural = GlobalMatrix::zeros(flat.rows(), cols);
        for b in 0..batch {
            for s in 0..seq {
                let r = flat_row(b, s, batch, seq, p);
                natural.data_mut()[(b * seq + s) * cols..(b * seq + s + 1) * cols].copy_from_slice(flat.row(r));
            }
        }
        Ok(natural)
    }

    pub fn shard(&self) -> &ShardedMatrix<T> {
        &self.x
    }

    pub fn into_shard(self) -> ShardedMatrix<T> {
        self.x
    }

    pub fn data(&self) -> &[T] {
        self.x.data()
    }

    pub fn group(&self) -> GroupState {
        GroupState::of(self.x.directions()).expect("checked on construction")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn width(&self) -> usize {
        self.x.global_shape().1
    }

    /// `[b/p, s/p, W/p]`.
    pub fn local_shape(&self) -> [usize; 3] {
        let p = self.x.side();
        [self.batch / p, self.seq / p, self.width() / p]
    }

    /// Same tile with new contents.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        Activation3D {
            x: self.x.with_data(data),
            ..self.clone()
        }
    }

    pub(crate) fn check_group(&self, expected: GroupState) -> Result<()> {
        if self.group() != expected {
            return Err(Error::GroupMismatch {
                expected: expected.index(),
                got: self.group().index(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_like(&self, other: &Self, what: &str) -> Result<()> {
        if self.x.placement() != other.x.placement() || self.x.global_shape() != other.x.global_shape() {
            return Err(Error::ShapeMismatch(format!("{what}: activation layouts differ")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_rows_are_a_permutation_with_tiles_per_rank() {
        let (b, s, p) = (4, 6, 2);
        let mut seen = vec![false; b * s];
        for bi in 0..b {
            for si in 0..s {
                let r = flat_row(bi, si, b, s, p);
                assert!(!seen[r]);
                seen[r] = true;
            }
        }
        // rank with batch block 1, seq block 0 owns rows 12..15
        assert_eq!(flat_row(2, 0, b, s, p), 12);
        assert_eq!(flat_row(3, 2, b, s, p), 17);
        assert_eq!(flat_row(2, 3, b, s, p), 18);
    }

    #[test]
    fn distribute_collect_round_trip() {
        let topo = CubeTopology::with_side(2).unwrap();
        let x = GlobalMatrix::from_fn(8, 8, |r, c| (r * 8 + c) as f64);
        for g in [GroupState::new(0).unwrap(), GroupState::new(1).unwrap()] {
            let fam = Activation3D::distribute(&x, 2, 4, g, &topo).unwrap();
            assert!(fam.iter().all(|a| a.local_shape() == [1, 2, 4] && a.data().len() == 8));
            assert!(fam.iter().all(|a| a.group() == g));
            assert_eq!(Activation3D::collect(&fam).unwrap(), x);
        }
    }

    #[test]
    fn tile_holds_its_batch_and_sequence_block() {
        let topo = CubeTopology::with_side(2).unwrap();
        // entry encodes (batch, seq, hidden)
        let x = GlobalMatrix::from_fn(8, 4, |r, c| (r / 4 * 100 + r % 4 * 10 + c) as f64);
        let fam = Activation3D::distribute(&x, 2, 4, GroupState::default(), &topo).unwrap();
        let c = crate::topology::Coords::new(1, 0, 1);
        let a = &fam[topo.rank_of(c).unwrap()];
        // batch 1, seq 0..2 (y block 0), hidden 2..4 (z block 1)
        assert_eq!(a.data(), &[102.0, 103.0, 112.0, 113.0]);
    }
}
