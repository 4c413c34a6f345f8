use super::activation::Activation3D;
use super::params::LinearParams;
use crate::comm::Endpoint;
use crate::error::{Error, Result};
use crate::ops3d::{add_vec_bwd, add_vec_fwd, matmul_ab_bwd, matmul_ab_fwd};
use crate::scalar::Scalar;
use crate::sharding::Layout;

/// The input tile a linear layer needs for its weight gradient.
#[derive(Debug, Clone)]
pub struct LinearSaved<T> {
    pub x: Activation3D<T>,
}

/// `Y = X·W + b`. The output arrives in the other input group.
pub async fn linear3d_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    params: &LinearParams<T>,
) -> Result<(Activation3D<T>, LinearSaved<T>)> {
    let d = x.group().directions();
    if params.w.directions() != d {
        return Err(Error::GroupMismatch {
            expected: super::GroupState::of(params.w.directions())?.index(),
            got: x.group().index(),
        });
    }
    if params.w.global_shape().0 != x.width() {
        return Err(Error::ShapeMismatch(format!(
            "linear {}x{} applied to width {}",
            params.w.global_shape().0,
            params.w.global_shape().1,
            x.width()
        )));
    }
    let y = matmul_ab_fwd(ep, x.shard(), &params.w, d).await?;
    let y = add_vec_fwd(ep, &y, &params.bias).await?;
    let y = y.relabel(Layout::Input, d.swapped())?;
    Ok((
        Activation3D::from_shard(y, x.batch(), x.seq())?,
        LinearSaved { x: x.clone() },
    ))
}

/// Returns `dX` (back in the forward input group) and the parameter gradients.
pub async fn linear3d_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &LinearSaved<T>,
    params: &LinearParams<T>,
) -> Result<(Activation3D<T>, LinearParams<T>)> {
    let g = saved.x.group();
    dy.check_group(g.toggled())?;
    let d = g.directions();
    let dy = dy.shard().clone().relabel(Layout::Output, d)?;
    let (dy, dbias) = add_vec_bwd(ep, &dy).await?;
    let (dx, dw) = matmul_ab_bwd(ep, &dy, saved.x.shard(), &params.w, d).await?;
    Ok((
        Activation3D::from_shard(dx, saved.x.batch(), saved.x.seq())?,
        LinearParams { w: dw, bias: dbias },
    ))
}
