//! Self-attention, parallel over the sequence.
//!
//! After the fused QKV projection a rank holds, for its batch block, the
//! queries, keys and values of one sequence block (split along the new input
//! axis `σ`) and `n/p` whole heads (split along the other free axis). Queries
//! are all-gathered along `σ`, each rank scores them against its own keys,
//! the softmax is normalised with a max and a sum all-reduce along `σ`, and
//! the partial contexts are reduce-scattered back to their query blocks.

use super::activation::Activation3D;
use super::config::TransformerConfig;
use super::linear::{linear3d_bwd, linear3d_fwd, LinearSaved};
use super::params::AttentionParams;
use crate::comm::{Endpoint, ReduceOp};
use crate::error::{Error, Result};
use crate::kernel::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::sharding::{Layout, ShardedMatrix};
use crate::topology::AxisGroup;

/// Per (local batch, local head) tensors kept for the backward pass.
#[derive(Debug, Clone)]
struct HeadSaved<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionSaved<T> {
    qkv: LinearSaved<T>,
    out: LinearSaved<T>,
    qkv_act: Activation3D<T>,
    ctx_act: Activation3D<T>,
    heads: Vec<HeadSaved<T>>,
}

/// Tile geometry of the sequence-parallel attention on one rank.
struct Geometry {
    p: usize,
    bp: usize,
    seq: usize,
    sp: usize,
    heads: usize,
    hd: usize,
    w: usize,
}

impl Geometry {
    fn new(cfg: &TransformerConfig, p: usize) -> Result<Self> {
        if !cfg.heads.is_multiple_of(p) {
            return Err(Error::HeadsIndivisible { heads: cfg.heads, p });
        }
        Ok(Geometry {
            p,
            bp: cfg.batch / p,
            seq: cfg.seq,
            sp: cfg.seq / p,
            heads: cfg.heads / p,
            hd: cfg.head_dim(),
            w: cfg.hidden / p,
        })
    }

    fn scale<T: Scalar>(&self) -> T {
        T::from_f64(1.0 / (self.hd as f64).sqrt())
    }

    /// Copies head `t` of local batch `bb` out of a `[rows, stride]` tile
    /// whose columns start at `offset`; `blocks` tiles are stacked (the
    /// gathered case) and read in block order.
    fn head<T: Scalar>(&self, tiles: &[T], blocks: usize, stride: usize, offset: usize, bb: usize, t: usize) -> Vec<T> {
        let rows_per_block = self.bp * self.sp;
        let mut out = Vec::with_capacity(blocks * self.sp * self.hd);
        for a in 0..blocks {
            for ss in 0..self.sp {
                let r = a * rows_per_block + bb * self.sp + ss;
                let base = r * stride + offset + t * self.hd;
                out.extend_from_slice(&tiles[base..base + self.hd]);
            }
        }
        out
    }

    /// Writes a full-sequence `s × hd` head block into a buffer ordered for
    /// reduce-scatter by sequence block.
    fn scatter_rows<T: Scalar>(&self, buf: &mut [T], bb: usize, t: usize, full: &[T]) {
        for i in 0..self.seq {
            let (a, ss) = (i / self.sp, i % self.sp);
            let r = (a * self.bp + bb) * self.sp + ss;
            let base = r * self.w + t * self.hd;
            buf[base..base + self.hd].copy_from_slice(&full[i * self.hd..(i + 1) * self.hd]);
        }
    }

    /// Writes a local `sp × hd` head block into a `[rows, stride]` tile.
    fn place<T: Scalar>(&self, tile: &mut [T], stride: usize, offset: usize, bb: usize, t: usize, local: &[T]) {
        for ss in 0..self.sp {
            let base = (bb * self.sp + ss) * stride + offset + t * self.hd;
            tile[base..base + self.hd].copy_from_slice(&local[ss * self.hd..(ss + 1) * self.hd]);
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let heads = self.heads;
        (0..self.bp).flat_map(move |bb| (0..heads).map(move |t| (bb, t)))
    }

    fn score_madds(&self) -> u64 {
        (self.bp * self.heads * self.seq * self.sp * self.hd) as u64
    }
}

fn columns<T: Scalar>(data: &[T], stride: usize, from: usize, width: usize) -> Vec<T> {
    data.chunks_exact(stride)
        .flat_map(|r| r[from..from + width].iter().copied())
        .collect()
}

/// Row-wise softmax of `s × sp` score tiles whose rows span the whole
/// sequence group: local max and sum, each completed by an all-reduce.
async fn softmax_rows<T: Scalar>(
    ep: &mut Endpoint<T>,
    g: &AxisGroup,
    scores: &mut [Vec<T>],
    cols: usize,
) -> Result<()> {
    let local_max: Vec<T> = scores
        .iter()
        .flat_map(|s| {
            s.chunks_exact(cols)
                .map(|r| r.iter().fold(T::neg_infinity(), |m, &v| m.max(v)))
        })
        .collect();
    let max = ep.all_reduce(g, &local_max, ReduceOp::Max).await?;
    let mut k = 0;
    let mut local_sum = Vec::with_capacity(max.len());
    for s in scores.iter_mut() {
        for row in s.chunks_exact_mut(cols) {
            let m = max[k];
            k += 1;
            let mut acc = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                acc += *v;
            }
            local_sum.push(acc);
        }
    }
    let sum = ep.all_reduce(g, &local_sum, ReduceOp::Sum).await?;
    let mut k = 0;
    for s in scores.iter_mut() {
        for row in s.chunks_exact_mut(cols) {
            let z = sum[k];
            k += 1;
            row.iter_mut().for_each(|v| *v = *v / z);
        }
    }
    Ok(())
}

pub async fn attention_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    x: &Activation3D<T>,
    params: &AttentionParams<T>,
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, AttentionSaved<T>)> {
    let geo = Geometry::new(cfg, ep.side())?;
    if x.batch() != cfg.batch || x.seq() != cfg.seq || x.width() != cfg.hidden {
        return Err(Error::ShapeMismatch("attention input does not match the config".into()));
    }
    let (qkv_act, qkv) = linear3d_fwd(ep, x, &params.qkv).await?;
    let inner = qkv_act.group().directions();
    let sg = ep.group(inner.input);
    let w = geo.w;
    let tile = qkv_act.data();
    let q_full = ep.all_gather(&sg, &columns(tile, 3 * w, 0, w)).await?;

    let mut heads = Vec::new();
    let mut scores = Vec::new();
    for (bb, t) in geo.pairs() {
        let q = geo.head(&q_full, geo.p, w, 0, bb, t);
        let k = geo.head(tile, 1, 3 * w, w, bb, t);
        let v = geo.head(tile, 1, 3 * w, 2 * w, bb, t);
        let scale = geo.scale::<T>();
        let s: Vec<T> = gemm_nt(geo.seq, geo.hd, geo.sp, &q, &k)
            .into_iter()
            .map(|e| e * scale)
            .collect();
        scores.push(s);
        heads.push(HeadSaved {
            q,
            k,
            v,
            probs: Vec::new(),
        });
    }
    ep.charge_multiply_adds(geo.score_madds());
    softmax_rows(ep, &sg, &mut scores, geo.sp).await?;

    let mut partial = vec![T::zero(); geo.p * geo.bp * geo.sp * w];
    for ((bb, t), (h, probs)) in geo.pairs().zip(heads.iter_mut().zip(scores)) {
        let ctx = gemm_nn(geo.seq, geo.sp, geo.hd, &probs, &h.v);
        geo.scatter_rows(&mut partial, bb, t, &ctx);
        h.probs = probs;
    }
    ep.charge_multiply_adds(geo.score_madds());
    let ctx = ep.reduce_scatter(&sg, &partial, ReduceOp::Sum).await?;
    let ctx = ShardedMatrix::from_local(
        (cfg.batch * cfg.seq, cfg.hidden),
        Layout::Input,
        inner,
        ep.side(),
        ep.coords(),
        ctx,
    )?;
    let ctx_act = Activation3D::from_shard(ctx, cfg.batch, cfg.seq)?;
    let (y, out) = linear3d_fwd(ep, &ctx_act, &params.out).await?;
    Ok((
        y,
        AttentionSaved {
            qkv,
            out,
            qkv_act,
            ctx_act,
            heads,
        },
    ))
}

pub async fn attention_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dy: &Activation3D<T>,
    saved: &AttentionSaved<T>,
    params: &AttentionParams<T>,
    cfg: &TransformerConfig,
) -> Result<(Activation3D<T>, AttentionParams<T>)> {
    let geo = Geometry::new(cfg, ep.side())?;
    let (dctx, g_out) = linear3d_bwd(ep, dy, &saved.out, &params.out).await?;
    dctx.check_like(&saved.ctx_act, "attention backward")?;
    let sg = ep.group(saved.qkv_act.group().directions().input);
    let w = geo.w;
    let dctx_full = ep.all_gather(&sg, dctx.data()).await?;
    let scale = geo.scale::<T>();

    let mut dps = Vec::new();
    let mut dvs = Vec::new();
    let mut rowdot = Vec::new();
    for ((bb, t), h) in geo.pairs().zip(&saved.heads) {
        let dc = geo.head(&dctx_full, geo.p, w, 0, bb, t);
        let dp = gemm_nt(geo.seq, geo.hd, geo.sp, &dc, &h.v);
        dvs.push(gemm_tn(geo.sp, geo.seq, geo.hd, &h.probs, &dc));
        for (r, pr) in dp.chunks_exact(geo.sp).zip(h.probs.chunks_exact(geo.sp)) {
            rowdot.push(r.iter().zip(pr).fold(T::zero(), |s, (&a, &b)| s + a * b));
        }
        dps.push(dp);
    }
    ep.charge_multiply_adds(2 * geo.score_madds());
    let rowdot = ep.all_reduce(&sg, &rowdot, ReduceOp::Sum).await?;

    let mut partial = vec![T::zero(); geo.p * geo.bp * geo.sp * w];
    let mut dqkv = vec![T::zero(); geo.bp * geo.sp * 3 * w];
    let mut k = 0;
    for (((bb, t), h), (dp, dv)) in geo.pairs().zip(&saved.heads).zip(dps.into_iter().zip(dvs)) {
        let mut ds = dp;
        for (row, pr) in ds.chunks_exact_mut(geo.sp).zip(h.probs.chunks_exact(geo.sp)) {
            let rd = rowdot[k];
            k += 1;
            for (g, &pv) in row.iter_mut().zip(pr) {
                *g = pv * (*g - rd) * scale;
            }
        }
        let dq = gemm_nn(geo.seq, geo.sp, geo.hd, &ds, &h.k);
        geo.scatter_rows(&mut partial, bb, t, &dq);
        let dk = gemm_tn(geo.sp, geo.seq, geo.hd, &ds, &h.q);
        geo.place(&mut dqkv, 3 * w, w, bb, t, &dk);
        geo.place(&mut dqkv, 3 * w, 2 * w, bb, t, &dv);
    }
    ep.charge_multiply_adds(2 * geo.score_madds());
    let dq = ep.reduce_scatter(&sg, &partial, ReduceOp::Sum).await?;
    for (row, dq_row) in dqkv.chunks_exact_mut(3 * w).zip(dq.chunks_exact(w)) {
        row[..w].copy_from_slice(dq_row);
    }
    let dqkv = saved.qkv_act.with_data(dqkv);
    let (dx, g_qkv) = linear3d_bwd(ep, &dqkv, &saved.qkv, &params.qkv).await?;
    Ok((dx, AttentionParams { qkv: g_qkv, out: g_out }))
}
