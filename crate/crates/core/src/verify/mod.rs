//! Serial references, finite differences, the cost model and benchmarks.

mod bench;
mod cost;
mod finite_diff;
mod harness;
pub mod reference;
mod serial;
mod suite;

pub use bench::{average_step, render_csv, run_scaling, scaled_config, write_csv, BenchRow, ScalingMode, CSV_HEADER};
pub use cost::{
    comm_ratio, predict_block_costs, predict_costs, predict_model_costs, BlockCost, CostPrediction, OpCost,
};
pub use finite_diff::{finite_diff, rel_err};
pub use harness::{
    block_forward_serial, run_block_parallel, run_block_serial, run_matmul_parallel, run_model_parallel, Block,
    BlockOutcome,
};
pub use reference::{serial_transformer_forward, serial_transformer_reference, SerialRun};
pub use serial::{column_sums, serial_add_vec, serial_matmul, serial_mul_vec};
pub use suite::{run_verify_suite, Check, SuiteOptions, VerifyReport};
