//! Analytic cost model.
//!
//! Counts follow the transport's accounting rules exactly, so a prediction
//! can be compared with measured counters by integer equality.

use crate::comm::ceil_log2;
use crate::error::Result;
use crate::nn::TransformerConfig;
use crate::sharding::per_rank_memory;
use crate::verify::Block;

/// Per-rank costs of one forward `M×N · N×K` product on a side-`p` cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostPrediction {
    pub per_rank_memory_elems: u64,
    pub per_rank_multiply_adds: u64,
    pub per_rank_comm_elems: u64,
    /// Collective rounds times `ceil(log2 p)`.
    pub latency_hops: u64,
}

pub fn predict_costs(m: usize, n: usize, k: usize, p: usize) -> Result<CostPrediction> {
    let memory = per_rank_memory(m, n, k, p)? as u64;
    let (m, n, k, pu) = (m as u64, n as u64, k as u64, p as u64);
    let p3 = pu * pu * pu;
    Ok(CostPrediction {
        per_rank_memory_elems: memory,
        per_rank_multiply_adds: m * n * k / p3,
        per_rank_comm_elems: (pu - 1) * (m * n + n * k + m * k) / p3,
        latency_hops: 3 * ceil_log2(p),
    })
}

/// `comm(p) / comm(q)` as an unreduced rational `(num, den)` for a fixed
/// shape: `(p−1)·q³ / ((q−1)·p³)`.
pub fn comm_ratio(p: u64, q: u64) -> (u64, u64) {
    ((p - 1) * q * q * q, (q - 1) * p * p * p)
}

/// Traffic of one constituent operation of a block.
///
/// `received` is summed over every rank of the cube (collectives that root
/// on one member are not rank-uniform); `calls` and `multiply_adds` are per
/// rank, since every rank joins every collective and does equal work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpCost {
    pub name: String,
    pub received: u64,
    pub calls: u64,
    pub multiply_adds: u64,
}

impl OpCost {
    fn new(name: impl Into<String>, received: u64, calls: u64, multiply_adds: u64) -> Self {
        OpCost {
            name: name.into(),
            received,
            calls,
            multiply_adds,
        }
    }

    pub fn sum<'a>(name: &str, ops: impl IntoIterator<Item = &'a OpCost>) -> OpCost {
        ops.into_iter().fold(OpCost::new(name, 0, 0, 0), |acc, o| {
            OpCost::new(
                name,
                acc.received + o.received,
                acc.calls + o.calls,
                acc.multiply_adds + o.multiply_adds,
            )
        })
    }
}

/// Predicted constituent costs of a block's forward and backward passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCost {
    pub forward: Vec<OpCost>,
    pub backward: Vec<OpCost>,
}

impl BlockCost {
    pub fn forward_total(&self) -> OpCost {
        OpCost::sum("forward", &self.forward)
    }

    pub fn backward_total(&self) -> OpCost {
        OpCost::sum("backward", &self.backward)
    }

    pub fn total(&self) -> OpCost {
        OpCost::sum("total", self.forward.iter().chain(&self.backward))
    }

    fn extend(&mut self, other: BlockCost) {
        self.forward.extend(other.forward);
        self.backward.extend(other.backward);
    }
}

struct Model {
    p: u64,
    cube: u64,
    rows: u64,
}

impl Model {
    /// One 3-D product whose operands and result hold `a`, `b`, `c` elements.
    fn matmul(&self, name: &str, a: u64, b: u64, c: u64, madds: u64) -> OpCost {
        OpCost::new(name, (self.p - 1) * (a + b + c), 3, madds / self.cube)
    }

    /// Broadcast plus all-gather of a length-`n` diagonal vector; its
    /// adjoint (reduce-scatter plus reduce) costs the same.
    fn vector(&self, name: &str, n: u64) -> OpCost {
        OpCost::new(name, (self.p * self.p - 1) * n, 2, 0)
    }

    /// An all-reduce of `len` elements per rank along one axis.
    fn all_reduce(&self, name: &str, len: u64) -> OpCost {
        OpCost::new(name, self.cube * (self.p - 1) * len, 1, 0)
    }

    /// An all-gather or reduce-scatter whose per-rank slice is `slice`.
    fn ring(&self, name: &str, slice: u64) -> OpCost {
        OpCost::new(name, self.cube * (self.p - 1) * slice, 1, 0)
    }

    fn linear(&self, name: &str, k: u64, n: u64) -> BlockCost {
        let (a, b, c) = (self.rows * k, k * n, self.rows * n);
        let madds = self.rows * k * n;
        BlockCost {
            forward: vec![
                self.matmul(&format!("{name} matmul"), a, b, c, madds),
                self.vector(&format!("{name} bias"), n),
            ],
            backward: vec![
                self.vector(&format!("{name} bias grad"), n),
                self.matmul(&format!("{name} input grad"), c, b, a, madds),
                self.matmul(&format!("{name} weight grad"), a, c, b, madds),
            ],
        }
    }

    fn layernorm(&self, name: &str, h: u64) -> BlockCost {
        let local_rows = self.rows / (self.p * self.p);
        BlockCost {
            forward: vec![
                self.all_reduce(&format!("{name} mean"), local_rows),
                self.all_reduce(&format!("{name} variance"), local_rows),
                self.vector(&format!("{name} gain"), h),
                self.vector(&format!("{name} shift"), h),
            ],
            backward: vec![
                self.vector(&format!("{name} shift grad"), h),
                self.vector(&format!("{name} gain gather"), h),
                self.vector(&format!("{name} gain grad"), h),
                self.all_reduce(&format!("{name} row sums"), 2 * local_rows),
            ],
        }
    }

    fn attention(&self, cfg: &TransformerConfig) -> BlockCost {
        let (b, s, n, h) = (cfg.batch as u64, cfg.seq as u64, cfg.heads as u64, cfg.hidden as u64);
        let tile = self.rows * h / self.cube;
        // one score row per (local batch, local head, query)
        let score_rows = b * n * s / (self.p * self.p);
        let score_madds = b * n * s * s * (h / n) / self.cube;
        let mut cost = self.linear("qkv", h, 3 * h);
        let core = BlockCost {
            forward: vec![
                self.ring("query gather", tile),
                OpCost::new("scores", 0, 0, score_madds),
                self.all_reduce("softmax max", score_rows),
                self.all_reduce("softmax sum", score_rows),
                OpCost::new("context", 0, 0, score_madds),
                self.ring("context scatter", tile),
            ],
            backward: vec![
                self.ring("context grad gather", tile),
                OpCost::new("probability and value grads", 0, 0, 2 * score_madds),
                self.all_reduce("softmax row dot", score_rows),
                OpCost::new("query and key grads", 0, 0, 2 * score_madds),
                self.ring("query grad scatter", tile),
            ],
        };
        let out = self.linear("attention out", h, h);
        cost.forward.extend(core.forward);
        cost.forward.extend(out.forward);
        let mut backward = out.backward;
        backward.extend(core.backward);
        backward.extend(cost.backward);
        cost.backward = backward;
        cost
    }

    fn mlp(&self, h: u64) -> BlockCost {
        let fc1 = self.linear("fc1", h, 4 * h);
        let fc2 = self.linear("fc2", 4 * h, h);
        let mut backward = fc2.backward;
        backward.extend(fc1.backward);
        let mut forward = fc1.forward;
        forward.extend(fc2.forward);
        BlockCost { forward, backward }
    }
}

/// Constituent costs of `block` under `cfg`, in execution order.
pub fn predict_block_costs(block: Block, cfg: &TransformerConfig) -> Result<BlockCost> {
    cfg.validate()?;
    let p = cfg.p as u64;
    let m = Model {
        p,
        cube: p * p * p,
        rows: (cfg.batch * cfg.seq) as u64,
    };
    let h = cfg.hidden as u64;
    Ok(match block {
        Block::Linear => m.linear("fc1", h, 4 * h),
        Block::LayerNorm => m.layernorm("ln1", h),
        Block::Attention => m.attention(cfg),
        Block::Mlp => m.mlp(h),
        Block::Layer => {
            let ln1 = m.layernorm("ln1", h);
            let attn = m.attention(cfg);
            let ln2 = m.layernorm("ln2", h);
            let mlp = m.mlp(h);
            let mut cost = BlockCost {
                forward: Vec::new(),
                backward: Vec::new(),
            };
            cost.forward.extend(ln1.forward);
            cost.forward.extend(attn.forward);
            cost.forward.extend(ln2.forward);
            cost.forward.extend(mlp.forward);
            cost.backward.extend(mlp.backward);
            cost.backward.extend(ln2.backward);
            cost.backward.extend(attn.backward);
            cost.backward.extend(ln1.backward);
            cost
        }
    })
}

/// Costs of a stack of `cfg.layers` layers.
pub fn predict_model_costs(cfg: &TransformerConfig) -> Result<BlockCost> {
    let layer = predict_block_costs(Block::Layer, cfg)?;
    let mut cost = BlockCost {
        forward: Vec::new(),
        backward: Vec::new(),
    };
    for _ in 0..cfg.layers {
        cost.extend(layer.clone());
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_cubed_on_side_two() {
        let c = predict_costs(8, 8, 8, 2).unwrap();
        assert_eq!(c.per_rank_memory_elems, 24);
        assert_eq!(c.per_rank_multiply_adds, 64);
        assert_eq!(c.per_rank_comm_elems, 24);
        assert_eq!(c.latency_hops, 3);
    }

    #[test]
    fn single_rank_has_no_traffic() {
        let c = predict_costs(4, 6, 10, 1).unwrap();
        assert_eq!(c.per_rank_memory_elems, 24 + 60 + 40);
        assert_eq!(c.per_rank_comm_elems, 0);
        assert_eq!(c.latency_hops, 0);
        let t = predict_block_costs(Block::Layer, &TransformerConfig::toy().with_side(1)).unwrap();
        assert_eq!(t.total().received, 0);
    }

    #[test]
    fn indivisible_shape_is_rejected() {
        assert!(predict_costs(6, 8, 8, 2).is_err());
    }

    #[test]
    fn doubling_the_side_divides_memory_and_compute_by_eight() {
        for p in [1, 2, 3] {
            let a = predict_costs(144, 144, 144, p).unwrap();
            let b = predict_costs(144, 144, 144, 2 * p).unwrap();
            assert_eq!(a.per_rank_memory_elems, 8 * b.per_rank_memory_elems);
            assert_eq!(a.per_rank_multiply_adds, 8 * b.per_rank_multiply_adds);
            // comm(p)·(2p−1) == 8(p−1)·comm(2p)
            let q = 2 * p as u64;
            assert_eq!(
                a.per_rank_comm_elems * (q - 1),
                8 * (p as u64 - 1) * b.per_rank_comm_elems
            );
            let (num, den) = comm_ratio(p as u64, q);
            assert_eq!(a.per_rank_comm_elems * den, b.per_rank_comm_elems * num);
        }
    }
}
