//! Behavioral model of 8-bit in-memory multiply-and-accumulate in a 6T SRAM
//! array: device physics, peripherals, process variation, array-level dot
//! products, quantized neural-network inference and an analytic
//! delay/energy comparison against a von Neumann baseline.

pub mod config;
pub mod device;
pub mod engine;
pub mod error;
pub mod layer;
pub mod nn;
pub mod perf;
pub mod peripherals;
pub mod variation;

pub use error::{Error, Result};
