pub mod autograd;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
