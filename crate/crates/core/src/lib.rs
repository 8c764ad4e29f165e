pub mod consensus;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
