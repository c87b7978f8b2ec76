//! Motion-capture solving engine: parametric marker synthesis, marker
//! corruption, reconstructability-based balancing, heatmap encoding and
//! two-view fusion, noise-aware body fitting, evaluation metrics and a
//! simulated multi-sensor capture pipeline.

pub mod balance;
pub mod capture;
pub mod corruption;
pub mod error;
pub mod fitter;
pub mod geometry;
pub mod heatmap;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod rotation;

pub use error::{Error, Result};
