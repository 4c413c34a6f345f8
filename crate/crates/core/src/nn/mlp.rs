use super::activation::Activation3D;
use super::linear::{linear3d_bwd, linear3d_fwd, LinearSaved};
use super::params::MlpParams;
use crate::comm::Endpoint;
use crate::error::Result;
use crate::scalar::Scalar;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let u = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(CUBIC) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let k = T::from_f64(CUBIC);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * k * x * x)
}

#[derive(Debug, Clone)]
pub struct MlpSaved<T> {
    pub fc1: LinearSaved<T>,
    pub pre: Activation3D<T>,
    pub fc2: LinearSaved<T>,
}

/// `fc2(gelu(fc1(x)))`; two linear layers leave the group unchanged.
pub async fn mlp_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    params: &MlpParams<T>,
) -> Result<(Activation3D<T>, MlpSaved<T>)> {
    let (pre, fc1) = linear3d_fwd(ep, x, &params.fc1).await?;
    let act = pre.with_data(pre.data().iter().map(|&v| gelu(v)).collect());
    let (y, fc2) = linear3d_fwd(ep, &act, &params.fc2).await?;
    Ok((y, MlpSaved { fc1, pre, fc2 }))
}

pub async fn mlp_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &MlpSaved<T>,
    params: &MlpParams<T>,
) -> Result<(Activation3D<T>, MlpParams<T>)> {
    let (dact, g2) = linear3d_bwd(ep, dy, &saved.fc2, &params.fc2).await?;
    let dpre = dact.with_data(
        dact.data()
            .iter()
            .zip(saved.pre.data())
            .map(|(&g, &v)| g * gelu_grad(v))
            .collect(),
    );
    let (dx, g1) = linear3d_bwd(ep, &dpre, &saved.fc1, &params.fc1).await?;
    Ok((dx, MlpParams { fc1: g1, fc2: g2 }))
}
