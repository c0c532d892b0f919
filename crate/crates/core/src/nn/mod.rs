//! Dense 4-d tensors, convolution kernels with hand-written backward passes,
//! a small op tape for encoder-decoder networks, and the Adam optimizer.

mod adam;
pub mod checkpoint;
mod graph;
mod ops;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, Adam, LayerParams};
pub use graph::{Activation, Network, Op, Trace};
pub use ops::{
    concat_channels_backward, concat_channels_forward, conv2d_backward, conv2d_forward, logit_skip_backward,
    logit_skip_forward, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, upsample2x_backward, upsample2x_forward, LOGIT_MARGIN,
};
pub use tensor::{Scalar, Tensor4};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("spatial dimensions {h}x{w} must be even")]
    OddDims { h: usize, w: usize },
    #[error("non-finite value after {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
