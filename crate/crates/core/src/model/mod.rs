//! Hierarchical encoder-decoder built from cuboid attention blocks.

mod config;
mod net;

pub use config::ModelConfig;
pub use net::Model;
