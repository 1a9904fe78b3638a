pub mod bootstrap;
pub mod cli;
pub mod distributions;
pub mod dsl;
pub mod error;
pub mod inference;
pub mod isp;
pub mod kkt;
pub mod model;
pub mod montecarlo;
pub mod pipeline;
pub mod restriction;
pub mod rng;
pub mod solow;
pub mod tolerance;

pub use error::{Error, Result};
