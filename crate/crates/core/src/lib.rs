//! Dynamic Nelson-Siegel term-structure models with a kernel-PCA functional
//! regression on a second yield curve.
//!
//! The pipeline runs `market_data` (ingest, grid matching, gap filling) ->
//! `kpca` (reference-curve factors) -> `state_space` / `estimation` (Kalman
//! filter and marginal likelihood) -> `forecasting`, with `stress` and
//! `portfolio` built on top.

pub mod error;
pub mod estimation;
pub mod exec;
pub mod forecasting;
pub mod kpca;
pub mod market_data;
pub mod nelson_siegel;
pub mod optim;
pub mod portfolio;
pub mod state_space;
pub mod stats;
pub mod stress;

pub use error::{Error, Result};
pub use exec::Execution;
