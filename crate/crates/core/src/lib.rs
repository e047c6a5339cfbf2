pub mod attention;
pub mod checks;
pub mod cli;
pub mod flops;
pub mod model;
mod error;
pub mod nn;
pub mod rope;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
