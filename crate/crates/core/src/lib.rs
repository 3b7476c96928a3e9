pub mod error;
pub mod numerics;
pub mod text;
pub mod kg;
pub mod kge;
pub mod model;
pub mod training;
pub mod inference;
pub mod evaluation;
pub mod config;
pub mod pipeline;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
