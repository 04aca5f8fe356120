//! Batch experiments for the complex BP network hybrid precoder: training
//! runs, user and SNR sweeps, and evaluation of saved weights. Results are
//! written as CSV with full double precision.

pub mod config;
pub mod experiments;
pub mod persist;

pub use config::{ExperimentConfig, Method, Profile};
pub use persist::WeightFile;
