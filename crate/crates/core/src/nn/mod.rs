//! Transformer blocks assembled from the 3-D operations.
//!
//! Activations are `[b, s, h]` tensors flattened to `b·s × h` matrices and
//! held in the input layout of the current directions: rank `(i, j, l)`
//! keeps batch block `i`, the sequence block of the input axis and the
//! hidden block of the output axis, `[b/p, s/p, h/p]` in all. A linear layer
//! exchanges the input and output axes; `x` stays the weight axis.

mod activation;
mod attention;
mod config;
mod layernorm;
mod linear;
mod mlp;
mod params;
mod transformer;

pub use activation::{flat_row, Activation3D};
pub use attention::{attention_bwd, attention_fwd, AttentionSaved};
pub use config::{GroupState, TransformerConfig};
pub use layernorm::{layernorm3d_bwd, layernorm3d_fwd, LayerNormSaved};
pub use linear::{linear3d_bwd, linear3d_fwd, LinearSaved};
pub use mlp::{gelu, gelu_grad, mlp_bwd, mlp_fwd, MlpSaved};
pub use params::{
    collect_layer_grads, pack_qkv, shard_layer, unpack_qkv, AttentionParams, LayerNormParams, LayerParams, LayerShard,
    LinearParams, MlpParams,
};
pub use transformer::{model_bwd, model_fwd, transformer_layer_bwd, transformer_layer_fwd, LayerSaved};
