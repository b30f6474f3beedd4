//! Forward (and matching backward) numerical kernels on [`Tensor`](crate::Tensor).
//!
//! Everything here is a pure function of its arguments. The taped versions
//! used for training live in [`crate::autograd`].

pub mod conv;
pub mod layout;
pub mod linalg;
pub mod norm;
pub mod pointwise;

pub use conv::{conv2d, ConvSpec};
pub use layout::{
    concat_channels, crop, crop_at, pixel_shuffle, pixel_unshuffle, reflect_pad, slice_channels, split_channels,
};
pub use linalg::{matmul, softmax_lastdim, transpose};
pub use norm::{adaptive_avg_pool, layer_norm_channels, LAYER_NORM_EPS};
pub use pointwise::{add, add_scalar, gelu, mul, mul_scalar, sub};
