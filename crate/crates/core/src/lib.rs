pub mod accountant;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fedsim;
pub mod learners;
pub mod math;
pub mod metrics;
pub mod protocols;
pub mod rng;
pub mod wire;

pub use error::{Error, Result};
