//! Cuboid decomposition and the attention layers built on it.

mod decompose;
mod layers;
mod spec;

pub use decompose::{AxisMap, Decomposition};
pub use layers::{
    cuboid_attention, AttnP, CrossStage, FfnP, GlobalAttn, GlobalStage, GlobalUpdate, Init, LinearP, NormP, SelfBlock, SelfStage, INIT_STD,
};
pub use spec::{CuboidSpec, Strategy};
