//! Dense numeric primitives shared by every network block.
//!
//! Everything here is a pure function over [`Matrix2D`] values in 64-bit
//! precision. Sequences are `length × channels`.

mod conv;
mod dense;
mod matrix;
mod ops;

pub use conv::{conv1d, conv1d_backward, ChannelAffine, Conv1DParams, Parameterized};
pub use dense::Dense;
pub use matrix::Matrix2D;
pub use ops::{
    downsample_half, downsample_half_backward, downsample_half_indexed, exact_sum, linear_resize,
    linear_resize_backward, relu, relu_backward, resize_taps, sigmoid, softmax_into,
    softmax_rows, softmax_rows_backward, upsample_double, ResizeTap,
};
