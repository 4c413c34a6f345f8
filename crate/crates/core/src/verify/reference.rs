//! Single-process Transformer layers with hand-written reverse mode.
//!
//! Matrices are `b·s × h` with token `(batch, seq)` on row `batch·s + seq`.
//! Every reduction runs in the same order as the distributed code on a
//! one-rank cube, so the two agree bit for bit there.

use super::serial::column_sums;
use crate::error::{Error, Result};
use crate::kernel::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::{gelu, gelu_grad, LayerParams, TransformerConfig};
use crate::scalar::Scalar;
use crate::sharding::GlobalMatrix;

fn mat<T: Scalar>(rows: usize, cols: usize, data: Vec<T>) -> GlobalMatrix<T> {
    GlobalMatrix::from_vec(rows, cols, data).expect("consistent shape")
}

fn zip_with<T: Scalar>(a: &GlobalMatrix<T>, b: &GlobalMatrix<T>, f: impl Fn(T, T) -> T) -> GlobalMatrix<T> {
    mat(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn row_sum<T: Scalar>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |s, &v| s + v)
}

pub fn linear_fwd<T: Scalar>(x: &GlobalMatrix<T>, w: &GlobalMatrix<T>, b: &[T]) -> GlobalMatrix<T> {
    let mut y = gemm_nn(x.rows(), x.cols(), w.cols(), x.data(), w.data());
    for row in y.chunks_exact_mut(w.cols()) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
    mat(x.rows(), w.cols(), y)
}

/// `(dX, dW, db)`.
pub fn linear_bwd<T: Scalar>(
    dy: &GlobalMatrix<T>,
    x: &GlobalMatrix<T>,
    w: &GlobalMatrix<T>,
) -> (GlobalMatrix<T>, GlobalMatrix<T>, Vec<T>) {
    let db = column_sums(dy);
    let dx = gemm_nt(dy.rows(), dy.cols(), w.rows(), dy.data(), w.data());
    let dw = gemm_tn(x.cols(), x.rows(), dy.cols(), x.data(), dy.data());
    (mat(dy.rows(), w.rows(), dx), mat(w.rows(), w.cols(), dw), db)
}

pub struct LayerNormCache<T> {
    xhat: GlobalMatrix<T>,
    rstd: Vec<T>,
}

pub fn layernorm_fwd<T: Scalar>(
    x: &GlobalMatrix<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (GlobalMatrix<T>, LayerNormCache<T>) {
    let width = T::from_f64(x.cols() as f64);
    let eps = T::from_f64(eps);
    let mut xhat = Vec::with_capacity(x.data().len());
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mean = row_sum(x.row(r)) / width;
        let centred: Vec<T> = x.row(r).iter().map(|&v| v - mean).collect();
        let sq: Vec<T> = centred.iter().map(|&v| v * v).collect();
        let rs = T::one() / (row_sum(&sq) / width + eps).sqrt();
        xhat.extend(centred.into_iter().map(|v| v * rs));
        rstd.push(rs);
    }
    let xhat = mat(x.rows(), x.cols(), xhat);
    let y = GlobalMatrix::from_fn(x.rows(), x.cols(), |r, c| xhat.get(r, c) * gamma[c] + beta[c]);
    (y, LayerNormCache { xhat, rstd })
}

/// `(dX, dγ, dβ)`.
pub fn layernorm_bwd<T: Scalar>(
    dy: &GlobalMatrix<T>,
    cache: &LayerNormCache<T>,
    gamma: &[T],
) -> (GlobalMatrix<T>, Vec<T>, Vec<T>) {
    let dbeta = column_sums(dy);
    let dgamma = column_sums(&zip_with(dy, &cache.xhat, |g, x| g * x));
    let dxhat = GlobalMatrix::from_fn(dy.rows(), dy.cols(), |r, c| dy.get(r, c) * gamma[c]);
    let width = T::from_f64(dy.cols() as f64);
    let mut dx = Vec::with_capacity(dy.data().len());
    for r in 0..dy.rows() {
        let (dr, xr) = (dxhat.row(r), cache.xhat.row(r));
        let prod: Vec<T> = dr.iter().zip(xr).map(|(&a, &b)| a * b).collect();
        let (m1, m2) = (row_sum(dr) / width, row_sum(&prod) / width);
        dx.extend(dr.iter().zip(xr).map(|(&d, &x)| cache.rstd[r] * (d - m1 - x * m2)));
    }
    (mat(dy.rows(), dy.cols(), dx), dgamma, dbeta)
}

struct HeadCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
}

pub struct AttentionCache<T> {
    x: GlobalMatrix<T>,
    ctx: GlobalMatrix<T>,
    heads: Vec<HeadCache<T>>,
}

fn head_of<T: Scalar>(m: &GlobalMatrix<T>, cfg: &TransformerConfig, b: usize, col0: usize) -> Vec<T> {
    let hd = cfg.head_dim();
    (0..cfg.seq)
        .flat_map(|s| m.row(b * cfg.seq + s)[col0..col0 + hd].iter().copied())
        .collect()
}

fn put_head<T: Scalar>(m: &mut GlobalMatrix<T>, cfg: &TransformerConfig, b: usize, col0: usize, h: &[T]) {
    let hd = cfg.head_dim();
    let cols = m.cols();
    for s in 0..cfg.seq {
        let r = b * cfg.seq + s;
        m.data_mut()[r * cols + col0..r * cols + col0 + hd].copy_from_slice(&h[s * hd..(s + 1) * hd]);
    }
}

pub fn attention_fwd<T: Scalar>(
    x: &GlobalMatrix<T>,
    p: &LayerParams<T>,
    cfg: &TransformerConfig,
) -> (GlobalMatrix<T>, AttentionCache<T>) {
    let (s, h, hd) = (cfg.seq, cfg.hidden, cfg.head_dim());
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let qkv = linear_fwd(x, &p.w_qkv, &p.b_qkv);
    let mut ctx = GlobalMatrix::zeros(x.rows(), h);
    let mut heads = Vec::new();
    for b in 0..cfg.batch {
        for t in 0..cfg.heads {
            let q = head_of(&qkv, cfg, b, t * hd);
            let k = head_of(&qkv, cfg, b, h + t * hd);
            let v = head_of(&qkv, cfg, b, 2 * h + t * hd);
            let mut probs: Vec<T> = gemm_nt(s, hd, s, &q, &k).into_iter().map(|e| e * scale).collect();
            for row in probs.chunks_exact_mut(s) {
                let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut z = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v = *v / z);
            }
            put_head(&mut ctx, cfg, b, t * hd, &gemm_nn(s, s, hd, &probs, &v));
            heads.push(HeadCache { q, k, v, probs });
        }
    }
    let y = linear_fwd(&ctx, &p.w_out, &p.b_out);
    (
        y,
        AttentionCache {
            x: x.clone(),
            ctx,
            heads,
        },
    )
}

/// Returns `dX` and accumulates into the attention fields of `grads`.
pub fn attention_bwd<T: Scalar>(
    dy: &GlobalMatrix<T>,
    cache: &AttentionCache<T>,
    p: &LayerParams<T>,
    cfg: &TransformerConfig,
    grads: &mut LayerParams<T>,
) -> GlobalMatrix<T> {
    let (s, h, hd) = (cfg.seq, cfg.hidden, cfg.head_dim());
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let (dctx, dw_out, db_out) = linear_bwd(dy, &cache.ctx, &p.w_out);
    grads.w_out = dw_out;
    grads.b_out = db_out;
    let mut dqkv = GlobalMatrix::zeros(dy.rows(), 3 * h);
    let mut heads = cache.heads.iter();
    for b in 0..cfg.batch {
        for t in 0..cfg.heads {
            let hc = heads.next().expect("one cache per head");
            let dc = head_of(&dctx, cfg, b, t * hd);
            let mut ds = gemm_nt(s, hd, s, &dc, &hc.v);
            let dv = gemm_tn(s, s, hd, &hc.probs, &dc);
            for (row, pr) in ds.chunks_exact_mut(s).zip(hc.probs.chunks_exact(s)) {
                let rd = row.iter().zip(pr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                for (g, &pv) in row.iter_mut().zip(pr) {
                    *g = pv * (*g - rd) * scale;
                }
            }
            put_head(&mut dqkv, cfg, b, t * hd, &gemm_nn(s, s, hd, &ds, &hc.k));
            put_head(&mut dqkv, cfg, b, h + t * hd, &gemm_tn(s, s, hd, &ds, &hc.q));
            put_head(&mut dqkv, cfg, b, 2 * h + t * hd, &dv);
        }
    }
    let (dx, dw_qkv, db_qkv) = linear_bwd(&dqkv, &cache.x, &p.w_qkv);
    grads.w_qkv = dw_qkv;
    grads.b_qkv = db_qkv;
    dx
}

pub struct MlpCache<T> {
    x: GlobalMatrix<T>,
    pre: GlobalMatrix<T>,
    act: GlobalMatrix<T>,
}

pub fn mlp_fwd<T: Scalar>(x: &GlobalMatrix<T>, p: &LayerParams<T>) -> (GlobalMatrix<T>, MlpCache<T>) {
    let pre = linear_fwd(x, &p.w1, &p.b1);
    let act = pre.map(gelu);
    let y = linear_fwd(&act, &p.w2, &p.b2);
    (y, MlpCache { x: x.clone(), pre, act })
}

pub fn mlp_bwd<T: Scalar>(
    dy: &GlobalMatrix<T>,
    cache: &MlpCache<T>,
    p: &LayerParams<T>,
    grads: &mut LayerParams<T>,
) -> GlobalMatrix<T> {
    let (dact, dw2, db2) = linear_bwd(dy, &cache.act, &p.w2);
    let dpre = zip_with(&dact, &cache.pre, |g, v| g * gelu_grad(v));
    let (dx, dw1, db1) = linear_bwd(&dpre, &cache.x, &p.w1);
    grads.w1 = dw1;
    grads.b1 = db1;
    grads.w2 = dw2;
    grads.b2 = db2;
    dx
}

pub struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

pub fn layer_fwd<T: Scalar>(
    x: &GlobalMatrix<T>,
    p: &LayerParams<T>,
    cfg: &TransformerConfig,
) -> (GlobalMatrix<T>, LayerCache<T>) {
    let (h1, ln1) = layernorm_fwd(x, &p.ln1_gamma, &p.ln1_beta, cfg.eps);
    let (a, attn) = attention_fwd(&h1, p, cfg);
    let x1 = zip_with(x, &a, |u, v| u + v);
    let (h2, ln2) = layernorm_fwd(&x1, &p.ln2_gamma, &p.ln2_beta, cfg.eps);
    let (m, mlp) = mlp_fwd(&h2, p);
    (zip_with(&x1, &m, |u, v| u + v), LayerCache { ln1, attn, ln2, mlp })
}

pub fn layer_bwd<T: Scalar>(
    dy: &GlobalMatrix<T>,
    cache: &LayerCache<T>,
    p: &LayerParams<T>,
    cfg: &TransformerConfig,
) -> (GlobalMatrix<T>, LayerParams<T>) {
    let mut grads = LayerParams::zeros(cfg);
    let dh2 = mlp_bwd(dy, &cache.mlp, p, &mut grads);
    let (dx1n, g2, b2) = layernorm_bwd(&dh2, &cache.ln2, &p.ln2_gamma);
    grads.ln2_gamma = g2;
    grads.ln2_beta = b2;
    let dx1 = zip_with(dy, &dx1n, |u, v| u + v);
    let dh1 = attention_bwd(&dx1, &cache.attn, p, cfg, &mut grads);
    let (dxn, g1, b1) = layernorm_bwd(&dh1, &cache.ln1, &p.ln1_gamma);
    grads.ln1_gamma = g1;
    grads.ln1_beta = b1;
    (zip_with(&dx1, &dxn, |u, v| u + v), grads)
}

/// Output, input gradient and per-layer parameter gradients of `⟨dy, model(x)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialRun<T> {
    pub y: GlobalMatrix<T>,
    pub dx: GlobalMatrix<T>,
    pub grads: Vec<LayerParams<T>>,
}

pub fn serial_transformer_forward<T: Scalar>(
    cfg: &TransformerConfig,
    layers: &[LayerParams<T>],
    x: &GlobalMatrix<T>,
) -> Result<GlobalMatrix<T>> {
    check_input(cfg, x)?;
    Ok(layers.iter().fold(x.clone(), |h, p| layer_fwd(&h, p, cfg).0))
}

pub fn serial_transformer_reference<T: Scalar>(
    cfg: &TransformerConfig,
    layers: &[LayerParams<T>],
    x: &GlobalMatrix<T>,
    dy: &GlobalMatrix<T>,
) -> Result<SerialRun<T>> {
    check_input(cfg, x)?;
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dy {:?} vs x {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(layers.len());
    for p in layers {
        let (next, c) = layer_fwd(&h, p, cfg);
        h = next;
        caches.push(c);
    }
    let mut g = dy.clone();
    let mut grads = Vec::with_capacity(layers.len());
    for (p, c) in layers.iter().zip(&caches).rev() {
        let (dx, lg) = layer_bwd(&g, c, p, cfg);
        g = dx;
        grads.push(lg);
    }
    grads.reverse();
    Ok(SerialRun { y: h, dx: g, grads })
}

fn check_input<T: Scalar>(cfg: &TransformerConfig, x: &GlobalMatrix<T>) -> Result<()> {
    if x.shape() != (cfg.batch * cfg.seq, cfg.hidden) || cfg.heads == 0 || !cfg.hidden.is_multiple_of(cfg.heads) {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} for batch {} seq {} hidden {} heads {}",
            x.shape(),
            cfg.batch,
            cfg.seq,
            cfg.hidden,
            cfg.heads
        )));
    }
    Ok(())
}
