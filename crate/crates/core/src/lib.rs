//! Embedding-evolution laboratory: trains FFM item embeddings under
//! real-time and windowed-batch update regimes, drives a synthetic
//! recommendation loop, and computes the monitoring metrics (maturity,
//! information per view, norm ratio, popularity share, engagement by bucket).

pub mod commands;
pub mod config;
pub mod error;
pub mod ffm;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod seed;
pub mod sim;
pub mod svg;
pub mod types;

pub use error::{Error, Result};
