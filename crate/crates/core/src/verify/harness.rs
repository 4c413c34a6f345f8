//! Runs one block (or a stack of layers) distributed and serially on
//! global data, so the two can be compared.

use super::reference as serial;
use crate::comm::{run_spmd, CostCounters, Schedule};
use crate::error::Result;
use crate::nn::{
    attention_bwd, attention_fwd, collect_layer_grads, layernorm3d_bwd, layernorm3d_fwd, linear3d_bwd, linear3d_fwd,
    mlp_bwd, mlp_fwd, model_bwd, model_fwd, shard_layer, transformer_layer_bwd, transformer_layer_fwd, Activation3D,
    GroupState, LayerParams, TransformerConfig,
};
use crate::ops3d::{matmul_fwd, Form};
use crate::scalar::Scalar;
use crate::sharding::{collect, partition, DirectionTriple, GlobalMatrix};
use crate::topology::CubeTopology;

/// A unit of the Transformer that can be checked on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// The MLP's first projection `h → 4h`.
    Linear,
    /// The first layer norm.
    LayerNorm,
    Attention,
    Mlp,
    Layer,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::Linear,
        Block::LayerNorm,
        Block::Attention,
        Block::Mlp,
        Block::Layer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Linear => "linear",
            Block::LayerNorm => "layer norm",
            Block::Attention => "attention",
            Block::Mlp => "mlp",
            Block::Layer => "transformer layer",
        }
    }

    pub fn output_width(self, cfg: &TransformerConfig) -> usize {
        match self {
            Block::Linear => 4 * cfg.hidden,
            _ => cfg.hidden,
        }
    }

    /// Whether the block hands its output to the other input group.
    pub fn toggles_group(self) -> bool {
        self == Block::Linear
    }
}

/// Collected results of a distributed forward and backward pass.
#[derive(Debug, Clone)]
pub struct BlockOutcome<T> {
    pub y: GlobalMatrix<T>,
    pub dx: GlobalMatrix<T>,
    /// Gradients of the block's parameters; all other fields are zero.
    pub grads: Vec<LayerParams<T>>,
    pub counters: Vec<CostCounters>,
    /// Per-rank counters as they stood when the forward pass finished.
    pub forward_counters: Vec<CostCounters>,
    pub group_in: GroupState,
    pub group_out: GroupState,
    /// Per rank: elements of the input, output and input-gradient tiles.
    pub tile_sizes: Vec<[usize; 3]>,
}

/// Forward then backward of `block` on `p³` ranks with upstream gradient `dy`.
pub fn run_block_parallel<T: Scalar>(
    block: Block,
    cfg: &TransformerConfig,
    params: &LayerParams<T>,
    x: &GlobalMatrix<T>,
    dy: &GlobalMatrix<T>,
    group: GroupState,
    schedule: Schedule,
) -> Result<BlockOutcome<T>> {
    cfg.validate()?;
    let topo = CubeTopology::with_side(cfg.p)?;
    let shards = shard_layer(params, cfg, group, &topo)?;
    let zeros = shard_layer(&LayerParams::zeros(cfg), cfg, group, &topo)?;
    let out_group = if block.toggles_group() { group.toggled() } else { group };
    let xs = Activation3D::distribute(x, cfg.batch, cfg.seq, group, &topo)?;
    let dys = Activation3D::distribute(dy, cfg.batch, cfg.seq, out_group, &topo)?;
    let run = run_spmd(topo, schedule, |mut ep| {
        let r = ep.rank();
        let (x, dy, sh, mut g) = (xs[r].clone(), dys[r].clone(), shards[r].clone(), zeros[r].clone());
        let cfg = *cfg;
        async move {
            let ep = &mut ep;
            let fwd;
            let (y, dx) = match block {
                Block::Linear => {
                    let (y, s) = linear3d_fwd(ep, &x, &sh.mlp.fc1).await?;
                    fwd = ep.counters();
                    let (dx, pg) = linear3d_bwd(ep, &dy, &s, &sh.mlp.fc1).await?;
                    g.mlp.fc1 = pg;
                    (y, dx)
                }
                Block::LayerNorm => {
                    let (y, s) = layernorm3d_fwd(ep, &x, &sh.ln1, cfg.eps).await?;
                    fwd = ep.counters();
                    let (dx, pg) = layernorm3d_bwd(ep, &dy, &s, &sh.ln1).await?;
                    g.ln1 = pg;
                    (y, dx)
                }
                Block::Attention => {
                    let (y, s) = attention_fwd(ep, &x, &sh.attn, &cfg).await?;
                    fwd = ep.counters();
                    let (dx, pg) = attention_bwd(ep, &dy, &s, &sh.attn, &cfg).await?;
                    g.attn = pg;
                    (y, dx)
                }
                Block::Mlp => {
                    let (y, s) = mlp_fwd(ep, &x, &sh.mlp).await?;
                    fwd = ep.counters();
                    let (dx, pg) = mlp_bwd(ep, &dy, &s, &sh.mlp).await?;
                    g.mlp = pg;
                    (y, dx)
                }
                Block::Layer => {
                    let (y, s) = transformer_layer_fwd(ep, &x, &sh, &cfg).await?;
                    fwd = ep.counters();
                    let (dx, pg) = transformer_layer_bwd(ep, &dy, &s, &sh, &cfg).await?;
                    g = pg;
                    (y, dx)
                }
            };
            let sizes = [x.data().len(), y.data().len(), dx.data().len()];
            Ok((y, dx, g, sizes, fwd))
        }
    })?;
    let mut ys = Vec::new();
    let mut dxs = Vec::new();
    let mut gs = Vec::new();
    let mut tile_sizes = Vec::new();
    let mut forward_counters = Vec::new();
    for (y, dx, g, s, f) in run.results {
        ys.push(y);
        dxs.push(dx);
        gs.push(g);
        tile_sizes.push(s);
        forward_counters.push(f);
    }
    Ok(BlockOutcome {
        group_in: group,
        group_out: ys[0].group(),
        y: Activation3D::collect(&ys)?,
        dx: Activation3D::collect(&dxs)?,
        grads: vec![collect_layer_grads(&gs)?],
        counters: run.counters,
        forward_counters,
        tile_sizes,
    })
}

/// Serial forward of `block`.
pub fn block_forward_serial<T: Scalar>(
    block: Block,
    cfg: &TransformerConfig,
    p: &LayerParams<T>,
    x: &GlobalMatrix<T>,
) -> GlobalMatrix<T> {
    match block {
        Block::Linear => serial::linear_fwd(x, &p.w1, &p.b1),
        Block::LayerNorm => serial::layernorm_fwd(x, &p.ln1_gamma, &p.ln1_beta, cfg.eps).0,
        Block::Attention => serial::attention_fwd(x, p, cfg).0,
        Block::Mlp => serial::mlp_fwd(x, p).0,
        Block::Layer => serial::layer_fwd(x, p, cfg).0,
    }
}

/// Serial `(y, dx, parameter gradients)` of `block`.
pub fn run_block_serial<T: Scalar>(
    block: Block,
    cfg: &TransformerConfig,
    p: &LayerParams<T>,
    x: &GlobalMatrix<T>,
    dy: &GlobalMatrix<T>,
) -> (GlobalMatrix<T>, GlobalMatrix<T>, LayerParams<T>) {
    let mut g = LayerParams::zeros(cfg);
    let (y, dx) = match block {
        Block::Linear => {
            let y = serial::linear_fwd(x, &p.w1, &p.b1);
            let (dx, dw, db) = serial::linear_bwd(dy, x, &p.w1);
            g.w1 = dw;
            g.b1 = db;
            (y, dx)
        }
        Block::LayerNorm => {
            let (y, c) = serial::layernorm_fwd(x, &p.ln1_gamma, &p.ln1_beta, cfg.eps);
            let (dx, dg, db) = serial::layernorm_bwd(dy, &c, &p.ln1_gamma);
            g.ln1_gamma = dg;
            g.ln1_beta = db;
            (y, dx)
        }
        Block::Attention => {
            let (y, c) = serial::attention_fwd(x, p, cfg);
            (y, serial::attention_bwd(dy, &c, p, cfg, &mut g))
        }
        Block::Mlp => {
            let (y, c) = serial::mlp_fwd(x, p);
            (y, serial::mlp_bwd(dy, &c, p, &mut g))
        }
        Block::Layer => {
            let (y, c) = serial::layer_fwd(x, p, cfg);
            let (dx, lg) = serial::layer_bwd(dy, &c, p, cfg);
            g = lg;
            (y, dx)
        }
    };
    (y, dx, g)
}

/// Forward and backward of a stack of layers on `p³` ranks.
pub fn run_model_parallel<T: Scalar>(
    cfg: &TransformerConfig,
    layers: &[LayerParams<T>],
    x: &GlobalMatrix<T>,
    dy: &GlobalMatrix<T>,
    group: GroupState,
    schedule: Schedule,
) -> Result<BlockOutcome<T>> {
    cfg.validate()?;
    let topo = CubeTopology::with_side(cfg.p)?;
    let per_layer = layers
        .iter()
        .map(|l| shard_layer(l, cfg, group, &topo))
        .collect::<Result<Vec<_>>>()?;
    let xs = Activation3D::distribute(x, cfg.batch, cfg.seq, group, &topo)?;
    let dys = Activation3D::distribute(dy, cfg.batch, cfg.seq, group, &topo)?;
    let run = run_spmd(topo, schedule, |mut ep| {
        let r = ep.rank();
        let shards: Vec<_> = per_layer.iter().map(|l| l[r].clone()).collect();
        let (x, dy) = (xs[r].clone(), dys[r].clone());
        let cfg = *cfg;
        async move {
            let (y, saved) = model_fwd(&mut ep, &x, &shards, &cfg).await?;
            let fwd = ep.counters();
            let (dx, grads) = model_bwd(&mut ep, &dy, &saved, &shards, &cfg).await?;
            let sizes = [x.data().len(), y.data().len(), dx.data().len()];
            Ok((y, dx, grads, sizes, fwd))
        }
    })?;
    let mut ys = Vec::new();
    let mut dxs = Vec::new();
    let mut gs: Vec<Vec<_>> = vec![Vec::new(); layers.len()];
    let mut tile_sizes = Vec::new();
    let mut forward_counters = Vec::new();
    for (y, dx, g, s, f) in run.results {
        ys.push(y);
        dxs.push(dx);
        for (k, lg) in g.into_iter().enumerate() {
            gs[k].push(lg);
        }
        tile_sizes.push(s);
        forward_counters.push(f);
    }
    Ok(BlockOutcome {
        group_in: group,
        group_out: ys[0].group(),
        y: Activation3D::collect(&ys)?,
        dx: Activation3D::collect(&dxs)?,
        grads: gs.iter().map(|g| collect_layer_grads(g)).collect::<Result<_>>()?,
        counters: run.counters,
        forward_counters,
        tile_sizes,
    })
}

/// One distributed product of global operands on `p³` ranks, with the
/// canonical directions; returns the collected result and per-rank counters.
pub fn run_matmul_parallel<T: Scalar>(
    form: Form,
    a: &GlobalMatrix<T>,
    b: &GlobalMatrix<T>,
    p: usize,
    schedule: Schedule,
) -> Result<(GlobalMatrix<T>, Vec<CostCounters>)> {
    form.output_shape(a.shape(), b.shape())?;
    let topo = CubeTopology::with_side(p)?;
    let d = DirectionTriple::CANONICAL;
    let [(la, da), (lb, db), _] = form.operand_layouts(d);
    let sa = partition(a, la, da, &topo)?;
    let sb = partition(b, lb, db, &topo)?;
    let run = run_spmd(topo, schedule, |mut ep| {
        let (x, y) = (sa[ep.rank()].clone(), sb[ep.rank()].clone());
        async move { matmul_fwd(&mut ep, form, &x, &y, d, None).await }
    })?;
    Ok((collect(&run.results)?, run.counters))
}
