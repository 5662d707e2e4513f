//! Malleable convolution and a small denoising stack built around it.
//!
//! * [`tensor`], [`tape`]: NHWC tensors and reverse-mode autodiff.
//! * [`ops`]: the layer vocabulary (conv, pooling, resize, shuffles, padding).
//! * [`malleconv`]: kernel predictor, kernel grids and the slice-and-apply operator.
//! * [`models`], [`train`]: DnCNN and MalleNet backbones, Adam and the training loop.
//! * [`data`], [`metrics`]: image I/O, noise, PSNR/SSIM, FLOP and memory accounting.
//! * [`verify`]: randomized oracle and finite-difference suites.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod init;
pub mod malleconv;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod parallel;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{max_abs_diff, rel_err, Shape, Tensor};
