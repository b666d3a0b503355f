//! Computation-reuse workbench for int8 LLM inference.
//!
//! An input-stationary lane holds one activation element and streams a weight
//! row past it. A small magnitude-indexed result cache memoizes products, so
//! repeated weight values skip the multiplier; signs fold into the cache read.
//! This crate models that machine twice over: a bit-exact functional engine
//! (identical outputs to plain matmul, by construction and by test) and
//! cycle-level timing models of the serial and slice-parallel lane, assembled
//! into a whole accelerator with an adder tree, a conventional all-multiply
//! baseline, and an event-count energy model.
//!
//! Entry points:
//! - [`quantizer`]: symmetric int8 quantization, the -128-free value domain.
//! - [`reuse`]: the result cache and the functional reuse engine.
//! - [`lora`]: low-rank adaptor fusion riding the same cache pass.
//! - [`lane`]: serial lane cycle model and the all-multiply baseline.
//! - [`sliced`]: P-way sliced lane with credit flow control.
//! - [`accel`]: lane array, passes, tiles, energy, run reports.
//! - [`workload`]: model-shaped workload descriptions (TOML).
//! - [`matfile`]: the AXLM on-disk matrix format.
//! - [`dist`]: seeded synthetic weight distributions.
//! - [`report`]: atomic report serialization.

pub mod accel;
pub mod dist;
pub mod lane;
pub mod lora;
pub mod matfile;
pub mod quantizer;
pub mod report;
pub mod reuse;
pub mod sliced;
pub mod workload;

pub use accel::{
    compare_reports, run_axllm, run_baseline, AcceleratorConfig, ComparisonReport, RunReport,
};
pub use quantizer::{quantize_symmetric, QuantizedMatrix, RealMatrix};
pub use reuse::{naive_mvm, reuse_mvm, ReuseStats, TileConfig};
pub use workload::WorkloadSpec;
