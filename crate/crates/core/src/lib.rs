//! Personalized voice activity detection toolkit: feature extraction, a small
//! autodiff engine, five fusion strategies for target-speaker detection,
//! corpus synthesis, training and evaluation.

pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod speaker;
pub mod training;

pub use error::{Error, Result};

/// Toolkit version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
