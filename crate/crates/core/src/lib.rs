//! Mapping compiler and event-driven simulator for ViT inference on
//! heterogeneous compute-in-memory chiplet packages.

pub mod engine;
pub mod error;
pub mod glp;
pub mod hwconfig;
pub mod metrics;
pub mod nop;
pub mod numerics;
pub mod sweep;
pub mod workload;

pub use error::{Error, Result};
