//! Malleable convolution: a predictor emits a low-resolution [`KernelGrid`]
//! of depthwise kernels, which is sliced onto the full-resolution map.

pub mod grid;
pub mod predictor;
pub mod slice;
pub mod stencil;

pub use grid::KernelGrid;
pub use predictor::{predictor_forward, predictor_tape, PredictorConfig, PredictorParams, RES_BLOCKS};
pub use slice::{kernel_swap_apply, slice_apply_fused, slice_apply_naive, NaiveSlice};
pub use stencil::{make_stencil, tau, AxisStencil, InterpStencil};
