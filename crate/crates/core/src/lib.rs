pub mod circuit;
pub mod error;
pub mod harness;
pub mod mapping;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod tiling;

pub use error::{Error, Result};
