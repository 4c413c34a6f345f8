//! Stacks of equally laid-out shards, multiplied slice by slice.

use super::matmul::{matmul_ab_bwd, matmul_ab_fwd, matmul_abt_bwd, matmul_abt_fwd, matmul_atb_bwd, matmul_atb_fwd};
use crate::comm::Endpoint;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sharding::{DirectionTriple, ShardedMatrix};

/// One rank's shards of a batch of equally shaped matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedShardedMatrix<T> {
    slices: Vec<ShardedMatrix<T>>,
}

impl<T: Scalar> BatchedShardedMatrix<T> {
    pub fn new(slices: Vec<ShardedMatrix<T>>) -> Result<Self> {
        if let Some(first) = slices.first() {
            for s in &slices[1..] {
                if s.global_shape() != first.global_shape()
                    || s.layout() != first.layout()
                    || s.directions() != first.directions()
                    || s.coords() != first.coords()
                {
                    return Err(Error::BatchMismatch("slices differ in shape or layout".into()));
                }
            }
        }
        Ok(BatchedShardedMatrix { slices })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[ShardedMatrix<T>] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<ShardedMatrix<T>> {
        self.slices
    }
}

fn check_batch(lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::BatchMismatch(format!("batch extents {lens:?}")));
    }
    Ok(())
}

macro_rules! batched_fwd {
    ($name:ident, $op:ident) => {
        pub async fn $name<T: Scalar>(
            ep: &mut Endpoint<T>,
            a: &BatchedShardedMatrix<T>,
            b: &BatchedShardedMatrix<T>,
            d: DirectionTriple,
        ) -> Result<BatchedShardedMatrix<T>> {
            check_batch(&[a.len(), b.len()])?;
            let mut out = Vec::with_capacity(a.len());
            for (x, y) in a.slices.iter().zip(&b.slices) {
                out.push($op(ep, x, y, d).await?);
            }
            BatchedShardedMatrix::new(out)
        }
    };
}

macro_rules! batched_bwd {
    ($name:ident, $op:ident) => {
        pub async fn $name<T: Scalar>(
            ep: &mut Endpoint<T>,
            dc: &BatchedShardedMatrix<T>,
            a: &BatchedShardedMatrix<T>,
            b: &BatchedShardedMatrix<T>,
            d: DirectionTriple,
        ) -> Result<(BatchedShardedMatrix<T>, BatchedShardedMatrix<T>)> {
            check_batch(&[dc.len(), a.len(), b.len()])?;
            let (mut da, mut db) = (Vec::with_capacity(a.len()), Vec::with_capacity(a.len()));
            for ((g, x), y) in dc.slices.iter().zip(&a.slices).zip(&b.slices) {
                let (ga, gb) = $op(ep, g, x, y, d).await?;
                da.push(ga);
                db.push(gb);
            }
            Ok((BatchedShardedMatrix::new(da)?, BatchedShardedMatrix::new(db)?))
        }
    };
}

batched_fwd!(matmul_ab_fwd_batched, matmul_ab_fwd);
batched_fwd!(matmul_abt_fwd_batched, matmul_abt_fwd);
batched_fwd!(matmul_atb_fwd_batched, matmul_atb_fwd);
batched_bwd!(matmul_ab_bwd_batched, matmul_ab_bwd);
batched_bwd!(matmul_abt_bwd_batched, matmul_abt_bwd);
batched_bwd!(matmul_atb_bwd_batched, matmul_atb_bwd);
