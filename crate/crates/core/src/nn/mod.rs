//! Dense tensors, reverse-mode autodiff, transformer blocks and Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;
mod transformer;

pub use adam::{AdamConfig, AdamState};
pub use graph::{sigmoid, Graph, NodeId, BCE_CLAMP, LAYER_NORM_EPS};
pub use params::{trunc_normal, Bound, LayerNorm, Linear, ParamId, ParamStore, INIT_STD};
pub use tensor::Tensor;
pub use transformer::{BlockTrace, Stack, TransformerBlock, FF_MULT};
