//! Risk-aware trajectory prediction toolkit.
//!
//! Builds location-risk heatmaps from closest vehicle–pedestrian
//! interactions, re-weights the training loss of a mixture-density
//! trajectory predictor with them (optionally zeroing parked vehicles),
//! and evaluates predictions with risk- and speed-stratified metrics.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod report;
pub mod riskmap;
pub mod simgen;

pub use error::{Error, Result};
