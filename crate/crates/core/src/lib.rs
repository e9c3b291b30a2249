//! Life-long scenario testing: adaptive sampling of driving scenarios by
//! repulsive sphere packing, scored against a built-in traffic simulator.

pub mod baselines;
pub mod config;
pub mod coverage;
pub mod error;
pub mod halton;
pub mod lifecycle;
pub mod metrics;
pub mod packing;
pub mod simulator;
pub mod space;
pub mod spatial_index;
pub mod strategy;

pub use error::{Error, Result};
