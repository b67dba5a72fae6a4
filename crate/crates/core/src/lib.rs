pub mod engine;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod prototypes;
pub mod rng;
pub mod scenario;

pub use error::{DiscoError, Result};
