//! Dense tensors with a reverse-mode tape and the fused kernels the
//! forecasting model is built from.

mod checkpoint;
pub mod counter;
mod element;
mod error;
mod gradcheck;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    config_hash, load_checkpoint, restore_params, save_checkpoint, CheckpointHeader, ManifestEntry, CHECKPOINT_VERSION,
};
pub use counter::{counted, OpCounts};
pub use element::{gemm, Element, MatRef};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheck, GradCheckReport};
pub use ops::{attention, conv2d_3x3, gather, AttentionMask, NormKind, NONE};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape, Var};
pub use tensor::{strides, Tensor};
