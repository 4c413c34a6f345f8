use super::activation::Activation3D;
use super::attention::{attention_bwd, attention_fwd, AttentionSaved};
use super::config::TransformerConfig;
use super::layernorm::{layernorm3d_bwd, layernorm3d_fwd, LayerNormSaved};
use super::mlp::{mlp_bwd, mlp_fwd, MlpSaved};
use super::params::LayerShard;
use crate::comm::Endpoint;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LayerSaved<T> {
    ln1: LayerNormSaved<T>,
    attn: AttentionSaved<T>,
    ln2: LayerNormSaved<T>,
    mlp: MlpSaved<T>,
}

fn add<T: Scalar>(a: &Activation3D<T>, b: &Activation3D<T>) -> Result<Activation3D<T>> {
    a.check_like(b, "residual")?;
    Ok(a.with_data(a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect()))
}

/// Pre-norm layer: `x₁ = x + attn(ln₁(x))`, `y = x₁ + mlp(ln₂(x₁))`.
pub async fn transformer_layer_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    params: &LayerShard<T>,
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, LayerSaved<T>)> {
    let (h1, ln1) = layernorm3d_fwd(ep, x, &params.ln1, cfg.eps).await?;
    let (a, attn) = attention_fwd(ep, &h1, &params.attn, cfg).await?;
    let x1 = add(x, &a)?;
    let (h2, ln2) = layernorm3d_fwd(ep, &x1, &params.ln2, cfg.eps).await?;
    let (m, mlp) = mlp_fwd(ep, &h2, &params.mlp).await?;
    let y = add(&x1, &m)?;
    Ok((y, LayerSaved { ln1, attn, ln2, mlp }))
}

pub async fn transformer_layer_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &LayerSaved<T>,
    params: &LayerShard<T>,
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, LayerShard<T>)> {
    let (dh2, mlp) = mlp_bwd(ep, dy, &saved.mlp, &params.mlp).await?;
    let (dx1_norm, ln2) = layernorm3d_bwd(ep, &dh2, &saved.ln2, &params.ln2).await?;
    let dx1 = add(dy, &dx1_norm)?;
    let (dh1, attn) = attention_bwd(ep, &dx1, &saved.attn, &params.attn, cfg).await?;
    let (dx_norm, ln1) = layernorm3d_bwd(ep, &dh1, &saved.ln1, &params.ln1).await?;
    let dx = add(&dx1, &dx_norm)?;
    Ok((dx, LayerShard { ln1, attn, ln2, mlp }))
}

/// Runs the layers in order; every layer keeps the input group, so no
/// re-sharding happens between them.
pub async fn model_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    layers: &[LayerShard<T>],
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, Vec<LayerSaved<T>>)> {
    let mut h = x.clone();
    let mut saved = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, s) = transformer_layer_fwd(ep, &h, layer, cfg).await?;
        h = next;
        saved.push(s);
    }
    Ok((h, saved))
}

pub async fn model_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &[LayerSaved<T>],
    layers: &[LayerShard<T>],
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, Vec<LayerShard<T>>)> {
    let mut g = dy.clone();
    let mut grads = Vec::with_capacity(layers.len());
    for (layer, s) in layers.iter().zip(saved).rev() {
        let (dx, lg) = transformer_layer_bwd(ep, &g, s, layer, cfg).await?;
        g = dx;
        grads.push(lg);
    }
    grads.reverse();
    Ok((g, grads))
}
