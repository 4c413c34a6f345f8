//! Weak and strong scaling tables in modeled cost units.
//!
//! A row's cost is the largest per-rank `multiply_adds + λ·received` over
//! the cube, taken from the counters of a real forward and backward run of
//! the layer stack. Wall-clock time is not measured.

use std::fmt::Write as _;
use std::io;

use crate::comm::{CostCounters, Schedule};
use crate::error::{Error, Result};
use crate::nn::{GroupState, LayerParams, TransformerConfig};
use crate::sharding::GlobalMatrix;
use crate::verify::run_model_parallel;

pub const CSV_HEADER: &str = "gpus,batch,hidden,forward_cost,backward_cost,avg_step_cost";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    /// Per-rank work held fixed: batch grows with `p`, hidden with `p²`.
    Weak,
    /// One problem on every cube.
    Strong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub gpus: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub forward_cost: f64,
    pub backward_cost: f64,
    pub average_step_cost: f64,
}

impl BenchRow {
    pub fn new(gpus: usize, batch_size: usize, hidden_size: usize, forward_cost: f64, backward_cost: f64) -> Self {
        BenchRow {
            gpus,
            batch_size,
            hidden_size,
            forward_cost,
            backward_cost,
            average_step_cost: average_step(forward_cost, backward_cost, batch_size),
        }
    }
}

/// Forward plus backward cost per sample.
pub fn average_step(forward: f64, backward: f64, batch: usize) -> f64 {
    (forward + backward) / batch as f64
}

/// The configuration run on a side-`p` cube. In weak mode `base` describes
/// one rank: batch and heads grow with `p`, hidden with `p²`.
pub fn scaled_config(mode: ScalingMode, base: &TransformerConfig, p: usize) -> Result<TransformerConfig> {
    let cfg = match mode {
        ScalingMode::Weak => TransformerConfig {
            batch: base.batch * p,
            heads: base.heads * p,
            hidden: base.hidden * p * p,
            p,
            ..*base
        },
        ScalingMode::Strong => base.with_side(p),
    };
    cfg.validate()
        .map_err(|e| Error::ConfigInvalid(format!("{mode:?} scaling on side {p}: {e}")))?;
    Ok(cfg)
}

fn cost(c: &CostCounters, lambda: f64) -> f64 {
    c.multiply_adds as f64 + lambda * c.elements_received as f64
}

fn minus(a: &CostCounters, b: &CostCounters) -> CostCounters {
    let mut d = CostCounters::default();
    d.elements_sent = a.elements_sent - b.elements_sent;
    d.elements_received = a.elements_received - b.elements_received;
    d.multiply_adds = a.multiply_adds - b.multiply_adds;
    d
}

/// One row per cube side in `sides` (so `gpus = side³`).
pub fn run_scaling(
    mode: ScalingMode,
    base: &TransformerConfig,
    sides: &[usize],
    lambda: f64,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if sides.is_empty() {
        return Err(Error::ConfigInvalid("no cube sides given".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::ConfigInvalid(format!("communication weight {lambda}")));
    }
    let mut rows = Vec::with_capacity(sides.len());
    for &p in sides {
        let cfg = scaled_config(mode, base, p)?;
        let layers: Vec<LayerParams<f64>> = (0..cfg.layers as u64)
            .map(|l| LayerParams::init(&cfg, seed + l))
            .collect();
        let n = cfg.batch * cfg.seq;
        let x = GlobalMatrix::from_fn(n, cfg.hidden, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0 - 0.5);
        let run = run_model_parallel(&cfg, &layers, &x, &x, GroupState::default(), Schedule::Threaded)?;
        let (mut fwd, mut bwd) = (0.0f64, 0.0f64);
        for (f, all) in run.forward_counters.iter().zip(&run.counters) {
            fwd = fwd.max(cost(f, lambda));
            bwd = bwd.max(cost(&minus(all, f), lambda));
        }
        rows.push(BenchRow::new(p * p * p, cfg.batch, cfg.hidden, fwd, bwd));
    }
    Ok(rows)
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        // Display for f64 is locale-independent and round-trips
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.gpus, r.batch_size, r.hidden_size, r.forward_cost, r.backward_cost, r.average_step_cost
        );
    }
    out
}

pub fn write_csv(rows: &[BenchRow], mut w: impl io::Write) -> Result<()> {
    w.write_all(render_csv(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_reproduce_their_average() {
        assert_eq!(format!("{:.3}", average_step(4.759, 15.676, 60)), "0.341");
        assert_eq!(format!("{:.3}", average_step(30.096, 81.212, 192)), "0.580");
    }

    #[test]
    fn weak_mode_grows_batch_heads_and_hidden() {
        let base = TransformerConfig {
            batch: 2,
            seq: 12,
            heads: 2,
            hidden: 8,
            p: 1,
            layers: 1,
            eps: 1e-5,
        };
        let c = scaled_config(ScalingMode::Weak, &base, 2).unwrap();
        assert_eq!((c.batch, c.heads, c.hidden, c.seq), (4, 4, 32, 12));
        assert!(matches!(
            scaled_config(ScalingMode::Strong, &base, 3),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn csv_has_the_fixed_header() {
        let rows = [BenchRow::new(8, 2, 16, 10.0, 20.5)];
        assert_eq!(render_csv(&rows), format!("{CSV_HEADER}\n8,2,16,10,20.5,15.25\n"));
    }
}
