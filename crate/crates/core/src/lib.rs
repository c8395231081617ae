//! Identification-robust inference for linear instrumental-variable models
//! with many instruments and heteroskedastic errors.
//!
//! The main entry points are [`inference::Pipeline`] for testing hypotheses
//! on a dataset, [`inference::invert_ci`] for confidence sets, and the
//! [`sim`] module for Monte Carlo experiments.

pub mod bootstrap;
pub mod cli;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod hat;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod rho;
pub mod rng;
pub mod sim;
pub mod stats;

pub use data::{IVDataset, PartialledData, Schema};
pub use error::{Error, Result};
pub use hat::HatMatrix;
pub use inference::{ConfidenceSet, Pipeline, TestConfig, TestKind, TestResult};
