//! Reconstructability-based balancing: poses the autoencoder reconstructs
//! poorly are up-weighted, and the rarest become anchors for latent-space
//! oversampling of the tail.

mod autoencoder;
pub mod fixture;
mod relevance;
mod sampling;
mod stats;

pub use autoencoder::*;
pub use relevance::*;
pub use sampling::*;
pub use stats::*;
