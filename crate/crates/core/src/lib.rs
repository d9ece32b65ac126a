pub mod dataset;
pub mod diffmath;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod io;
pub mod kg;
pub mod metrics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
