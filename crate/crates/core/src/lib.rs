//! Analytical performance model of a multi-core CPU with systolic-array and
//! compute-in-memory coprocessors running multimodal LLM inference.

pub mod arch;
pub mod calibrate;
pub mod cycles;
pub mod error;
pub mod memory;
pub mod microsim;
pub mod pipeline;
pub mod pruning;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
