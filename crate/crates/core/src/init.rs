//! Parameter initialization.

use crate::ops::ConvSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fan-in scaled Gaussian, `N(0, gain² · 2 / fan_in)` with `fan_in = k²·c_in`
/// (`k²` for depthwise).
pub fn he_normal(spec: &ConvSpec, gain: f32, rng: &mut Rng) -> Tensor {
    let fan_in = spec.k * spec.k * if spec.depthwise { 1 } else { spec.c_in };
    let std = gain * (2.0 / fan_in as f32).sqrt();
    Tensor::randn(spec.weight_shape(), std, rng)
}
