use crate::comm::{Endpoint, ReduceOp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sharding::{DiagonalVector, Placement, ShardedMatrix, Split};
use crate::topology::Axis;

/// Row-split shards whose block rows run along `x` are the ones a diagonal
/// vector can be broadcast onto: the holder of column block `c`, sub-slice
/// `i` is rank `(i, c, c)`, one hop along the fine axis from `(i, ·, ·)`.
fn vector_placement<T: Scalar>(a: &ShardedMatrix<T>, len: usize) -> Result<Placement> {
    let pl = a.placement();
    if pl.split != Split::Rows || pl.row_axis != Axis::X {
        return Err(Error::LayoutMismatch(format!(
            "row vectors combine with row-split shards blocked along x, got {:?}{}",
            a.layout(),
            a.directions()
        )));
    }
    if len != a.global_shape().1 {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {len} against {} columns",
            a.global_shape().1
        )));
    }
    Ok(pl)
}

/// Broadcasts `b` from the diagonal along the fine axis, then all-gathers it
/// along `x`; returns the column segment matching `a`'s columns.
pub async fn gather_vector_segment<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &DiagonalVector<T>,
) -> Result<Vec<T>> {
    let pl = vector_placement(a, b.global_len())?;
    if b.coords() != ep.coords() || b.side() != ep.side() {
        return Err(Error::LayoutMismatch(format!(
            "vector shard of rank {} passed on rank {}",
            b.coords(),
            ep.coords()
        )));
    }
    let p = ep.side();
    let n = b.global_len() / (p * p);
    let fine = ep.group(pl.fine_axis);
    let root = ep.coords().get(pl.col_axis);
    let piece = ep.broadcast(&fine, root, n, b.slice()).await?;
    let rows = ep.group(pl.row_axis);
    ep.all_gather(&rows, &piece).await
}

/// Sums an `rows × cols` buffer down its columns, rows ascending.
fn column_sums<T: Scalar>(cols: usize, data: &[T]) -> Vec<T> {
    let mut sums = vec![T::zero(); cols];
    for row in data.chunks_exact(cols) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

/// Adjoint of [`gather_vector_segment`]: reduce-scatters per-column partial
/// sums along `x`, then reduces them along the fine axis onto the diagonal.
pub async fn column_sums_to_diagonal<T: Scalar>(
    ep: &mut Endpoint<T>,
    like: &ShardedMatrix<T>,
    partial: &[T],
) -> Result<DiagonalVector<T>> {
    let len = like.global_shape().1;
    let pl = vector_placement(like, len)?;
    let rows = ep.group(pl.row_axis);
    let piece = ep.reduce_scatter(&rows, partial, ReduceOp::Sum).await?;
    let fine = ep.group(pl.fine_axis);
    let root = ep.coords().get(pl.col_axis);
    let slice = ep.reduce(&fine, root, &piece, ReduceOp::Sum).await?;
    DiagonalVector::from_local(len, ep.side(), ep.coords(), slice)
}

/// `C = A + b` added to every row.
pub async fn add_vec_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &DiagonalVector<T>,
) -> Result<ShardedMatrix<T>> {
    let seg = gather_vector_segment(ep, a, b).await?;
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(seg.len()) {
        for (v, &s) in row.iter_mut().zip(&seg) {
            *v += s;
        }
    }
    Ok(a.with_data(out))
}

/// `dA = dC`, `db` = column sums of `dC` on the diagonal.
pub async fn add_vec_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dc: &ShardedMatrix<T>,
) -> Result<(ShardedMatrix<T>, DiagonalVector<T>)> {
    let (_, cols) = dc.shard_shape();
    vector_placement(dc, dc.global_shape().1)?;
    let partial = column_sums(cols, dc.data());
    let db = column_sums_to_diagonal(ep, dc, &partial).await?;
    Ok((dc.clone(), db))
}

/// `C = A ⊙ b` scaling every row.
pub async fn mul_vec_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &DiagonalVector<T>,
) -> Result<ShardedMatrix<T>> {
    let seg = gather_vector_segment(ep, a, b).await?;
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(seg.len()) {
        for (v, &s) in row.iter_mut().zip(&seg) {
            *v *= s;
        }
    }
    Ok(a.with_data(out))
}

/// `dA = dC ⊙ b`, `db` = column sums of `dC ⊙ A` on the diagonal.
/// The segment of `b` is gathered again rather than kept from the forward.
pub async fn mul_vec_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dc: &ShardedMatrix<T>,
    a: &ShardedMatrix<T>,
    b: &DiagonalVector<T>,
) -> Result<(ShardedMatrix<T>, DiagonalVector<T>)> {
    if dc.placement() != a.placement() || dc.global_shape() != a.global_shape() {
        return Err(Error::ShapeMismatch("gradient and saved input differ in layout".into()));
    }
    let seg = gather_vector_segment(ep, a, b).await?;
    let cols = seg.len();
    let mut da = dc.data().to_vec();
    for row in da.chunks_exact_mut(cols) {
        for (v, &s) in row.iter_mut().zip(&seg) {
            *v *= s;
        }
    }
    let prod: Vec<T> = dc.data().iter().zip(a.data()).map(|(&g, &x)| g * x).collect();
    let partial = column_sums(cols, &prod);
    let db = column_sums_to_diagonal(ep, dc, &partial).await?;
    Ok((dc.with_data(da), db))
}
