pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tasks;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
