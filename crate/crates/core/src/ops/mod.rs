//! Differentiable operators: convolution, pooling, resampling, activations,
//! and channel concatenation, each with an explicit backward pass.

pub mod conv;
pub mod elementwise;
pub mod matmul;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use elementwise::{
    concat_channels, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
    split_channels,
};
pub use pool::{
    broadcast_spatial, broadcast_spatial_backward, global_avg_pool, global_avg_pool_backward,
    maxpool2x2, maxpool2x2_backward, maxunpool2x2, maxunpool2x2_backward, PoolIndexMap,
};
pub use resize::{bilinear_resize, bilinear_resize_backward, bilinear_upsample};
