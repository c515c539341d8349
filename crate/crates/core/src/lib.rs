pub mod body;
pub mod config;
pub mod data;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod recon;
pub mod rotation;

pub use config::PipelineConfig;
pub use error::{Error, Result};
