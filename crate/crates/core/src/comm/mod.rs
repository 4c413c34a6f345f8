//! Deterministic in-process collectives over cube axis groups.
//!
//! ```
//! use cube3d::comm::{run_spmd, Schedule};
//! use cube3d::topology::{Axis, CubeTopology};
//!
//! let topo = CubeTopology::build(8).unwrap();
//! let run = run_spmd::<f64, _, _, _>(topo, Schedule::Lockstep, |mut ep| async move {
//!     let g = ep.group(Axis::Y);
//!     let mine = [ep.rank() as f64];
//!     ep.all_gather(&g, &mine).await
//! })
//! .unwrap();
//! assert_eq!(run.results[0], vec![0.0, 2.0]);
//! assert_eq!(run.counters[0].elements_received, 1);
//! ```

mod counters;
mod spmd;
mod transport;

pub use counters::{ceil_log2, CollectiveKind, CostCounters, KindCounters, ReduceOp};
pub use spmd::{run_spmd, Schedule, SpmdRun};
pub use transport::Endpoint;
