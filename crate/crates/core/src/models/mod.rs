//! DnCNN-style chains and the MalleNet pyramid.

pub mod build;
pub mod config;
pub mod graph;

pub use build::{build_dncnn, build_mallenet, MalleInsert};
pub use config::{Arch, ModelConfig};
pub use graph::{ForwardOptions, KernelSwap, LayerSpec, MalleCapture, ModelGraph, NodeRef, ParamStore};

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything that maps a noisy batch to a denoised batch of the same shape.
pub trait Denoiser {
    fn denoise(&self, noisy: &Tensor) -> Result<Tensor>;
}

impl Denoiser for ModelGraph {
    fn denoise(&self, noisy: &Tensor) -> Result<Tensor> {
        self.forward(noisy)
    }
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, noisy: &Tensor) -> Result<Tensor> {
        Ok(noisy.clone())
    }
}
