//! Collective 3-D matrix-matrix and matrix-vector operations.
//!
//! Every function here is called by all ranks of the cube in the same order,
//! each passing its own shard and endpoint. A product gathers each operand
//! along its fine axis, multiplies the gathered blocks locally and
//! reduce-scatters the partial result along the contraction axis, so every
//! rank multiplies `(M/p)(N/p)(K/p)` and receives `(p−1)(MN+NK+MK)/p³`
//! elements.
//!
//! Backward passes are forward products with permuted directions.

mod batched;
mod matmul;
mod vector;

pub use batched::{
    matmul_ab_bwd_batched, matmul_ab_fwd_batched, matmul_abt_bwd_batched, matmul_abt_fwd_batched,
    matmul_atb_bwd_batched, matmul_atb_fwd_batched, BatchedShardedMatrix,
};
pub use matmul::{
    matmul_ab_bwd, matmul_ab_fwd, matmul_abt_bwd, matmul_abt_fwd, matmul_atb_bwd, matmul_atb_fwd, matmul_fwd, Form,
    GradPair, Operand,
};
pub use vector::{add_vec_bwd, add_vec_fwd, column_sums_to_diagonal, gather_vector_segment, mul_vec_bwd, mul_vec_fwd};
