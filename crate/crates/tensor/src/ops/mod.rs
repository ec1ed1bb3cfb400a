//! Kernels and their vector-Jacobian products.

mod attention;
mod conv;
mod elementwise;
mod gather;
mod linalg;
mod norm;
mod softmax;

use std::sync::Arc;

pub use attention::{attention, AttentionMask};
pub use conv::conv2d_3x3;
pub use gather::{gather, nearest_upsample_index, patch_merge_index, patch_unmerge_index, NONE};
pub use norm::NormKind;
pub use softmax::softmax_in_place;

use crate::element::Element;
use crate::tape::{accumulate, Node, NodeId};
use crate::tensor::Tensor;

pub(crate) enum Op<E: Element> {
    Leaf,
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, E),
    AddBroadcast { x: NodeId, p: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    MseLoss(NodeId, NodeId),
    Gelu(NodeId),
    LeakyRelu(NodeId, E),
    MatMul(NodeId, NodeId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Softmax { x: NodeId, axis: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, stats: Vec<(E, E)> },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, stats: Vec<(E, E)> },
    Conv3x3 { x: NodeId, w: NodeId, b: Option<NodeId> },
    Gather { srcs: Vec<NodeId>, row: usize, index: Arc<[u32]> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, mask: AttentionMask, probs: Vec<E> },
}

impl<E: Element> Op<E> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBroadcast { .. } => "add_broadcast",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MseLoss(..) => "mse_loss",
            Op::Gelu(_) => "gelu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GroupNorm { .. } => "group_norm",
            Op::Conv3x3 { .. } => "conv2d_3x3",
            Op::Gather { .. } => "gather",
            Op::Attention { .. } => "attention",
        }
    }

    pub(crate) fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Reshape(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Gelu(x)
            | Op::LeakyRelu(x, _)
            | Op::Softmax { x, .. } => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MseLoss(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::AddBroadcast { x, p } => vec![*x, *p],
            Op::Linear { x, w, b } | Op::Conv3x3 { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } | Op::GroupNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Gather { srcs, .. } => srcs.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    pub(crate) fn backward(
        &self,
        nodes: &[Node<E>],
        out: &Tensor<E>,
        g: &Tensor<E>,
        grads: &mut [Option<Tensor<E>>],
    ) {
        let ctx = Ctx { nodes, grads };
        match self {
            Op::Leaf => {}
            Op::Reshape(x) => elementwise::reshape_backward(ctx, *x, g),
            Op::Add(a, b) => elementwise::add_backward(ctx, *a, *b, g, E::one()),
            Op::Sub(a, b) => elementwise::add_backward(ctx, *a, *b, g, -E::one()),
            Op::Mul(a, b) => elementwise::mul_backward(ctx, *a, *b, g),
            Op::Scale(x, s) => elementwise::scale_backward(ctx, *x, *s, g),
            Op::AddBroadcast { x, p } => elementwise::add_broadcast_backward(ctx, *x, *p, g),
            Op::Sum(x) => elementwise::sum_backward(ctx, *x, g, E::one()),
            Op::Mean(x) => {
                let n = E::of(nodes[*x].value.len() as f64);
                elementwise::sum_backward(ctx, *x, g, E::one() / n)
            }
            Op::MseLoss(a, b) => elementwise::mse_backward(ctx, *a, *b, g),
            Op::Gelu(x) => elementwise::gelu_backward(ctx, *x, g),
            Op::LeakyRelu(x, s) => elementwise::leaky_backward(ctx, *x, *s, g),
            Op::MatMul(a, b) => linalg::matmul_backward(ctx, *a, *b, g),
            Op::Linear { x, w, b } => linalg::linear_backward(ctx, *x, *w, *b, g),
            Op::Softmax { x, axis } => softmax::softmax_backward(ctx, *x, *axis, out, g),
            Op::LayerNorm { x, gamma, beta, stats } => {
                norm::layer_norm_backward(ctx, *x, *gamma, *beta, stats, g)
            }
            Op::GroupNorm { x, gamma, beta, groups, stats } => {
                norm::group_norm_backward(ctx, *x, *gamma, *beta, *groups, stats, g)
            }
            Op::Conv3x3 { x, w, b } => conv::conv_backward(ctx, *x, *w, *b, g),
            Op::Gather { srcs, row, index } => gather::gather_backward(ctx, srcs, *row, index, g),
            Op::Attention { q, k, v, heads, mask, probs } => {
                attention::attention_backward(ctx, *q, *k, *v, *heads, mask, probs, g)
            }
        }
    }
}

/// Backward-pass access to parent values and gradient slots.
pub(crate) struct Ctx<'a, E: Element> {
    nodes: &'a [Node<E>],
    grads: &'a mut [Option<Tensor<E>>],
}

impl<'a, E: Element> Ctx<'a, E> {
    fn val(&self, id: NodeId) -> &'a Tensor<E> {
        &self.nodes[id].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn add(&mut self, id: NodeId, g: Tensor<E>) {
        if self.nodes[id].requires_grad {
            accumulate(&mut self.grads[id], g);
        }
    }

    fn add_data(&mut self, id: NodeId, data: Vec<E>) {
        let shape = self.nodes[id].value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("gradient shape matches value");
        self.add(id, t);
    }
}
