use super::activation::Activation3D;
use super::params::LayerNormParams;
use crate::comm::{Endpoint, ReduceOp};
use crate::error::{Error, Result};
use crate::ops3d::{add_vec_bwd, add_vec_fwd, mul_vec_bwd, mul_vec_fwd};
use crate::scalar::Scalar;

/// Normalised input and per-row reciprocal standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormSaved<T> {
    pub xhat: Activation3D<T>,
    pub rstd: Vec<T>,
}

fn row_sums<T: Scalar>(cols: usize, data: &[T]) -> Vec<T> {
    data.chunks_exact(cols)
        .map(|r| r.iter().fold(T::zero(), |s, &v| s + v))
        .collect()
}

/// `y = γ ⊙ (x − μ)/√(σ² + eps) + β` per token.
///
/// A token's hidden vector is split across the output axis only, so the
/// mean and variance each take one sum all-reduce along that axis.
pub async fn layernorm3d_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    params: &LayerNormParams<T>,
    eps: f64,
) -> Result<(Activation3D<T>, LayerNormSaved<T>)> {
    if params.gamma.global_len() != x.width() || params.beta.global_len() != x.width() {
        return Err(Error::ShapeMismatch(format!(
            "layer norm of width {} applied to width {}",
            params.gamma.global_len(),
            x.width()
        )));
    }
    let g = ep.group(x.group().directions().output);
    let cols = x.shard().shard_shape().1;
    let width = T::from_f64(x.width() as f64);
    let mean: Vec<T> = ep
        .all_reduce(&g, &row_sums(cols, x.data()), ReduceOp::Sum)
        .await?
        .into_iter()
        .map(|s| s / width)
        .collect();
    let mut centred = x.data().to_vec();
    for (row, &m) in centred.chunks_exact_mut(cols).zip(&mean) {
        row.iter_mut().for_each(|v| *v -= m);
    }
    let sq: Vec<T> = centred.iter().map(|&v| v * v).collect();
    let var = ep.all_reduce(&g, &row_sums(cols, &sq), ReduceOp::Sum).await?;
    let eps = T::from_f64(eps);
    let rstd: Vec<T> = var.into_iter().map(|s| T::one() / (s / width + eps).sqrt()).collect();
    for (row, &r) in centred.chunks_exact_mut(cols).zip(&rstd) {
        row.iter_mut().for_each(|v| *v *= r);
    }
    let xhat = x.with_data(centred);
    let y = mul_vec_fwd(ep, xhat.shard(), &params.gamma).await?;
    let y = add_vec_fwd(ep, &y, &params.beta).await?;
    Ok((x.with_data(y.into_data()), LayerNormSaved { xhat, rstd }))
}

/// `dx = rstd·(dx̂ − mean(dx̂) − x̂·mean(dx̂ ⊙ x̂))` with `dx̂ = dy ⊙ γ`; both
/// row means come from one fused all-reduce.
pub async fn layernorm3d_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &LayerNormSaved<T>,
    params: &LayerNormParams<T>,
) -> Result<(Activation3D<T>, LayerNormParams<T>)> {
    dy.check_like(&saved.xhat, "layer norm backward")?;
    let (_, dbeta) = add_vec_bwd(ep, dy.shard()).await?;
    let (dxhat, dgamma) = mul_vec_bwd(ep, dy.shard(), saved.xhat.shard(), &params.gamma).await?;
    let cols = dy.shard().shard_shape().1;
    let rows = saved.rstd.len();
    let xh = saved.xhat.data();
    let dxh = dxhat.data();
    let prod: Vec<T> = dxh.iter().zip(xh).map(|(&a, &b)| a * b).collect();
    let mut local = row_sums(cols, dxh);
    local.extend(row_sums(cols, &prod));
    let g = ep.group(dy.group().directions().output);
    let sums = ep.all_reduce(&g, &local, ReduceOp::Sum).await?;
    let width = T::from_f64(dy.width() as f64);
    let mut dx = Vec::with_capacity(dxh.len());
    for r in 0..rows {
        let (m1, m2) = (sums[r] / width, sums[rows + r] / width);
        for c in 0..cols {
            let k = r * cols + c;
            dx.push(saved.rstd[r] * (dxh[k] - m1 - xh[k] * m2));
        }
    }
    Ok((
        dy.with_data(dx),
        LayerNormParams {
            gamma: dgamma,
            beta: dbeta,
        },
    ))
}
