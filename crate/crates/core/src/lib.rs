pub mod covariance;
pub mod edges;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod likelihood;
pub mod modelselect;
pub mod pipeline;
pub mod sampler;
pub mod simgen;

pub use error::{Error, Result};
