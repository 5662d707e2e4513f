//! Kernel predictor: a small CNN run on a pooled copy of the feature map.
//!
//! ```text
//! x (h, w, c)
//!   avg_pool(pool)                       (skipped when pool == 1)
//!   entry: conv3x3 c -> p, relu
//!   2 x residual block: relu(h + conv3x3(relu(conv3x3(h))))
//!   max_pool(2)
//!   exit: conv1x1 p -> (k²+1)·c          packed KernelGrid
//! ```
//!
//! The grid therefore has `h / (2·pool)` rows. With the default `pool = 4`
//! that is one cell per 8×8 pixels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::init::he_normal;
use crate::malleconv::grid::{packed_channels, weight_channel, KernelGrid};
use crate::ops::ConvSpec;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const RES_BLOCKS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PredictorConfig {
    /// Spatial size of the predicted depthwise kernels.
    pub k: usize,
    /// Channels of the feature map the kernels apply to.
    pub channels: usize,
    /// Trunk width.
    pub width: usize,
    /// Average-pooling factor in front of the trunk; 1 disables pooling.
    pub pool: usize,
}

impl PredictorConfig {
    pub fn new(k: usize, channels: usize) -> Self {
        PredictorConfig { k, channels, width: 16, pool: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 || self.channels == 0 || self.width == 0 || self.pool == 0 {
            return Err(Error::InvalidShape(format!("invalid predictor config {self:?}")));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        2 * self.pool
    }

    pub fn grid_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.divisor(), w / self.divisor())
    }

    pub fn exit_channels(&self) -> usize {
        packed_channels(self.k, self.channels)
    }

    /// Every convolution in forward order, by parameter prefix.
    pub fn convs(&self) -> Vec<(String, ConvSpec)> {
        let p = self.width;
        let mut out = vec![("entry".to_string(), ConvSpec::same(3, self.channels, p))];
        for i in 0..RES_BLOCKS {
            out.push((format!("res{i}.a"), ConvSpec::same(3, p, p)));
            out.push((format!("res{i}.b"), ConvSpec::same(3, p, p)));
        }
        out.push(("exit".to_string(), ConvSpec::same(1, p, self.exit_channels())));
        out
    }

    /// `(name, shape)` of every parameter.
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        self.convs()
            .into_iter()
            .flat_map(|(name, spec)| [(format!("{name}.w"), spec.weight_shape()), (format!("{name}.b"), spec.bias_shape())])
            .collect()
    }

    /// Initial value of parameter `name`: He-normal trunk weights, zero trunk
    /// biases, zero exit weights and an exit bias encoding the delta kernel
    /// with zero bias in every cell.
    pub fn init_param(&self, name: &str, rng: &mut Rng) -> Result<Tensor> {
        let (conv, kind) = name
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("unknown predictor parameter `{name}`")))?;
        let (_, spec) = self
            .convs()
            .into_iter()
            .find(|(n, _)| n == conv)
            .ok_or_else(|| Error::Config(format!("unknown predictor parameter `{name}`")))?;
        match (conv, kind) {
            ("exit", "w") => Ok(Tensor::zeros(spec.weight_shape())),
            ("exit", "b") => {
                let (k, c) = (self.k, self.channels);
                let mut b = vec![0.0f32; self.exit_channels()];
                for ch in 0..c {
                    b[weight_channel(ch, k / 2, k / 2, k)] = 1.0;
                }
                Tensor::new(spec.bias_shape(), b)
            }
            (_, "w") => Ok(he_normal(&spec, 1.0, rng)),
            (_, "b") => Ok(Tensor::zeros(spec.bias_shape())),
            _ => Err(Error::Config(format!("unknown predictor parameter `{name}`"))),
        }
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        self.validate()?;
        if s.c != self.channels {
            return Err(Error::ShapeMismatch { op: "predictor input channels", lhs: s, rhs: s.with_c(self.channels) });
        }
        let d = self.divisor();
        if s.h % d != 0 || s.w % d != 0 {
            return Err(Error::Divisibility {
                op: "predictor_forward",
                detail: format!("input {}x{} is not a multiple of {d}", s.h, s.w),
            });
        }
        Ok(())
    }
}

/// Predictor weights, keyed by names such as `entry.w` or `res1.b.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    config: PredictorConfig,
    params: BTreeMap<String, Tensor>,
}

impl PredictorParams {
    /// Identity-initialized predictor; parameter `name` draws from `Rng::keyed(seed, name)`.
    pub fn init(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, _)| {
                let t = config.init_param(&name, &mut Rng::keyed(seed, &name))?;
                Ok((name, t))
            })
            .collect::<Result<_>>()?;
        Ok(PredictorParams { config, params })
    }

    pub fn from_map(config: PredictorConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        for (name, shape) in config.param_shapes() {
            match params.get(&name) {
                Some(t) if t.shape() == shape => {}
                Some(t) => return Err(Error::ShapeMismatch { op: "predictor parameter", lhs: t.shape(), rhs: shape }),
                None => return Err(Error::Config(format!("missing predictor parameter `{name}`"))),
            }
        }
        if params.len() != config.param_shapes().len() {
            return Err(Error::Config("unexpected extra predictor parameters".into()));
        }
        Ok(PredictorParams { config, params })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self.params.get_mut(name).ok_or_else(|| Error::Config(format!("unknown predictor parameter `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(Error::ShapeMismatch { op: "predictor parameter", lhs: t.shape(), rhs: slot.shape() });
        }
        *slot = t;
        Ok(())
    }
}

/// Records the predictor on `tape`, fetching parameters through `param`.
/// Returns the packed `(n, gh, gw, (k²+1)·c)` grid.
pub fn predictor_tape(tape: &mut Tape, x: Var, cfg: &PredictorConfig, param: &mut dyn FnMut(&mut Tape, &str) -> Result<Var>) -> Result<Var> {
    cfg.check_input(tape.value(x).shape())?;
    let mut conv = |tape: &mut Tape, h: Var, name: &str, spec: &ConvSpec| -> Result<Var> {
        let w = param(tape, &format!("{name}.w"))?;
        let b = param(tape, &format!("{name}.b"))?;
        tape.conv2d(h, spec, w, Some(b))
    };
    let convs = cfg.convs();
    let mut h = if cfg.pool > 1 { tape.avg_pool(x, cfg.pool)? } else { x };
    h = conv(tape, h, &convs[0].0, &convs[0].1)?;
    h = tape.relu(h)?;
    for block in convs[1..1 + 2 * RES_BLOCKS].chunks_exact(2) {
        let a = conv(tape, h, &block[0].0, &block[0].1)?;
        let a = tape.relu(a)?;
        let b = conv(tape, a, &block[1].0, &block[1].1)?;
        let s = tape.add(h, b)?;
        h = tape.relu(s)?;
    }
    h = tape.max_pool(h, 2)?;
    let (name, spec) = convs.last().expect("exit conv");
    conv(tape, h, name, spec)
}

/// Runs the predictor on `x` and unpacks the result into a [`KernelGrid`].
pub fn predictor_forward(x: &Tensor, p: &PredictorParams) -> Result<KernelGrid> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut param = |tape: &mut Tape, name: &str| -> Result<Var> {
        let t = p.get(name).ok_or_else(|| Error::Config(format!("missing predictor parameter `{name}`")))?;
        Ok(tape.constant(t.clone()))
    };
    let g = predictor_tape(&mut tape, xv, &p.config, &mut param)?;
    KernelGrid::new(tape.value(g).clone(), p.config.k)
}
