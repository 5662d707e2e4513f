//! Forward and backward kernels for the fixed layer vocabulary.
//!
//! These are plain functions over [`Tensor`](crate::Tensor)s. The
//! differentiable versions live on [`Tape`](crate::Tape), which calls the
//! `*_backward` kernels here.

pub mod conv;
pub mod pad;
pub mod pointwise;
pub mod pool;
pub mod resize;
pub mod shuffle;

pub use conv::{conv2d, depthwise_conv2d, ConvSpec, Padding};
pub use pad::{crop, reflect_pad};
pub use pointwise::{add_bias, concat_channels, relu};
pub use pool::{avg_pool, max_pool};
pub use resize::bilinear_resize;
pub use shuffle::{channel_to_space, space_to_channel};
