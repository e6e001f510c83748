//! Convolutional surrogates with periodic padding and global sum pooling.
//!
//! Everything is f64 and runs on the CPU. Layers are exposed both as
//! standalone kernels ([`layers`]) and composed into a [`Network`] whose
//! parameters live in one flat vector.

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use network::{
    backward, build_1d_three_stage_arch, build_single_conv_arch, extract_stage1_response, forward,
    param_count, LayerSpec, Network, NetworkSpec, Trace,
};
pub use tensor::Tensor;
