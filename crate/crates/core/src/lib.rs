pub mod cli;
pub mod cuboid;
pub mod data;
pub mod metrics;
pub mod model;
mod error;
pub mod patterns;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
