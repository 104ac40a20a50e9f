//! Disadvantaged-community classification pipeline.
//!
//! Census employment and income data are ingested and aggregated to tracts,
//! turned into one of five feature variants, and used to train and
//! grid-search six model families. The best model is then used to project
//! DAC status onto other years and its errors are explained against the
//! burden indicators.

pub mod analysis;
pub mod automl;
pub mod cli;
pub mod domain;
pub mod error;
pub mod features;
pub mod ingest;
pub mod models;
pub mod report;
pub mod scoring;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
