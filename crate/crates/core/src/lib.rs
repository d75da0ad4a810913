//! Offline auto-bidding by conditional trajectory generation.

pub mod agents;
pub mod checkpoint;
pub mod conditions;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod export;
pub mod invdyn;
pub mod nn;
pub mod oracle;
pub mod sampler;
pub mod schedule;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
