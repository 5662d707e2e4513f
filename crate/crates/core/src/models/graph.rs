//! Declarative layer lists with a named parameter store.
//!
//! Layers run in order. Each consumes the previous layer's output (the graph
//! input for layer 0); `Concat` and `Add` additionally read an earlier node.
//! Parameters are named `l{index}.{local}`, e.g. `l2.w` or `l5.malle.exit.b`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::init::he_normal;
use crate::malleconv::slice::kernel_swap_apply;
use crate::malleconv::{predictor_tape, KernelGrid, PredictorConfig};
use crate::models::config::ModelConfig;
use crate::ops::ConvSpec;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Kernel size of the depthwise convolution inside inverted bottlenecks.
pub const BOTTLENECK_DW_K: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Dense convolution with bias.
    Conv(ConvSpec),
    Relu,
    /// `x + project(relu(dw(relu(expand(x)))))`: 1×1 expand to
    /// `expansion · channels`, 3×3 depthwise, 1×1 projection back.
    InvertedBottleneck { channels: usize, expansion: usize },
    /// Predicts a kernel grid from its input and slices it back onto the input.
    MalleConv(PredictorConfig),
    SpaceToChannel(usize),
    ChannelToSpace(usize),
    /// Bilinear upsampling by an integer factor.
    BilinearUp(usize),
    /// Channel concatenation `[previous, source]`.
    Concat(NodeRef),
    Add(NodeRef),
}

impl LayerSpec {
    fn bottleneck_convs(channels: usize, expansion: usize) -> [(&'static str, ConvSpec); 3] {
        let e = channels * expansion;
        [
            ("expand", ConvSpec::same(1, channels, e)),
            ("dw", ConvSpec::depthwise(BOTTLENECK_DW_K, e)),
            ("project", ConvSpec::same(1, e, channels)),
        ]
    }

    /// Local parameter names and shapes, without the layer prefix.
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        let conv = |prefix: &str, spec: &ConvSpec| {
            let dot = if prefix.is_empty() { String::new() } else { format!("{prefix}.") };
            [(format!("{dot}w"), spec.weight_shape()), (format!("{dot}b"), spec.bias_shape())]
        };
        match self {
            LayerSpec::Conv(spec) => conv("", spec).to_vec(),
            LayerSpec::InvertedBottleneck { channels, expansion } => {
                Self::bottleneck_convs(*channels, *expansion).iter().flat_map(|(n, s)| conv(n, s)).collect()
            }
            LayerSpec::MalleConv(cfg) => cfg.param_shapes().into_iter().map(|(n, s)| (format!("malle.{n}"), s)).collect(),
            _ => Vec::new(),
        }
    }

    fn source(&self) -> Option<NodeRef> {
        match self {
            LayerSpec::Concat(r) | LayerSpec::Add(r) => Some(*r),
            _ => None,
        }
    }

    /// Output shape for input `x` (and the referenced node's shape `src`).
    pub fn output_shape(&self, x: Shape, src: Option<Shape>) -> Result<Shape> {
        let mismatch = |op, rhs| Error::ShapeMismatch { op, lhs: x, rhs };
        match self {
            LayerSpec::Conv(spec) => {
                spec.validate()?;
                if x.c != spec.c_in {
                    return Err(mismatch("conv input channels", x.with_c(spec.c_in)));
                }
                spec.output_shape(x)
            }
            LayerSpec::Relu => Ok(x),
            LayerSpec::InvertedBottleneck { channels, expansion } => {
                if x.c != *channels || *expansion == 0 {
                    return Err(mismatch("inverted bottleneck channels", x.with_c(*channels)));
                }
                Ok(x)
            }
            LayerSpec::MalleConv(cfg) => {
                cfg.validate()?;
                if x.c != cfg.channels {
                    return Err(mismatch("malleconv channels", x.with_c(cfg.channels)));
                }
                let d = cfg.divisor();
                if x.h % d != 0 || x.w % d != 0 {
                    return Err(Error::Divisibility { op: "malleconv", detail: format!("{x} not a multiple of {d}") });
                }
                Ok(x)
            }
            LayerSpec::SpaceToChannel(r) => {
                if *r == 0 || x.h % r != 0 || x.w % r != 0 {
                    return Err(Error::Divisibility { op: "space_to_channel", detail: format!("{x} by {r}") });
                }
                Ok(Shape::new(x.n, x.h / r, x.w / r, x.c * r * r))
            }
            LayerSpec::ChannelToSpace(r) => {
                if *r == 0 || x.c % (r * r) != 0 {
                    return Err(Error::Divisibility { op: "channel_to_space", detail: format!("{x} by {r}") });
                }
                Ok(Shape::new(x.n, x.h * r, x.w * r, x.c / (r * r)))
            }
            LayerSpec::BilinearUp(r) => {
                if *r == 0 {
                    return Err(Error::InvalidShape("bilinear_up by 0".into()));
                }
                Ok(Shape::new(x.n, x.h * r, x.w * r, x.c))
            }
            LayerSpec::Concat(_) => {
                let s = src.expect("concat source");
                if (s.n, s.h, s.w) != (x.n, x.h, x.w) {
                    return Err(mismatch("concat", s));
                }
                Ok(x.with_c(x.c + s.c))
            }
            LayerSpec::Add(_) => {
                let s = src.expect("add source");
                if s != x {
                    return Err(mismatch("add", s));
                }
                Ok(x)
            }
        }
    }
}

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    /// Replaces an existing parameter with a tensor of the same shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self.map.get_mut(name).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(Error::ShapeMismatch { op: "parameter update", lhs: t.shape(), rhs: slot.shape() });
        }
        *slot = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.map
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore { map: iter.into_iter().collect() }
    }
}

/// Replace MalleConv layer `layer` by one cell's kernel applied everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSwap {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Record parameters as trainable (`Tape::param`) rather than constants.
    pub trainable: bool,
    pub swap: Option<KernelSwap>,
}

/// Tape handles of one MalleConv layer's input, packed grid and output.
#[derive(Clone, Copy, Debug)]
pub struct MalleTrace {
    pub layer: usize,
    pub input: Var,
    pub grid: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    pub malle: Vec<MalleTrace>,
}

/// Inference result with the MalleConv internals materialized.
#[derive(Clone, Debug)]
pub struct MalleCapture {
    pub layer: usize,
    pub input: Tensor,
    pub grid: KernelGrid,
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    params: ParamStore,
    in_channels: usize,
    residual: bool,
    divisor: usize,
    /// First layer index of each pyramid level, finest level first.
    level_starts: Vec<usize>,
    /// Layer whose weights use the reduced head gain, if any.
    head: Option<usize>,
}

/// Gain applied to the He init of the final convolution of residual models.
pub const HEAD_INIT_GAIN: f32 = 0.01;
/// Gain applied to the He init of each inverted bottleneck projection.
pub const BOTTLENECK_PROJECT_GAIN: f32 = 0.1;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

impl ModelGraph {
    /// Validates the layer list, computes the required input divisor and
    /// initializes parameters with seed 0.
    pub fn new(config: ModelConfig, layers: Vec<LayerSpec>, in_channels: usize, residual: bool, level_starts: Vec<usize>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if let Some(NodeRef::Layer(j)) = l.source() {
                if j >= i {
                    return Err(Error::Config(format!("layer {i} references layer {j}, which does not precede it")));
                }
            }
        }
        let divisor = Self::required_divisor(&layers)?;
        let head = if residual { layers.iter().rposition(|l| matches!(l, LayerSpec::Conv(_))) } else { None };
        let mut g = ModelGraph { config, layers, params: ParamStore::default(), in_channels, residual, divisor, level_starts, head };
        let shapes = g.shape_check(Shape::new(1, divisor, divisor, in_channels))?;
        if residual && shapes.last().map(|s| s.c) != Some(in_channels) {
            return Err(Error::Config("residual model must end with the input channel count".into()));
        }
        for (i, l) in g.layers.iter().enumerate() {
            for (name, shape) in l.param_shapes() {
                let full = format!("l{i}.{name}");
                if g.params.map.insert(full.clone(), Tensor::zeros(shape)).is_some() {
                    return Err(Error::Config(format!("duplicate parameter `{full}`")));
                }
            }
        }
        g.init_weights(0)?;
        Ok(g)
    }

    /// Smallest input multiple for which every layer's divisibility holds.
    fn required_divisor(layers: &[LayerSpec]) -> Result<usize> {
        let mut scale = 1usize;
        let mut div = 1usize;
        for l in layers {
            match l {
                LayerSpec::SpaceToChannel(r) => {
                    scale *= r;
                    div = lcm(div, scale);
                }
                LayerSpec::ChannelToSpace(r) | LayerSpec::BilinearUp(r) => {
                    if scale % r != 0 {
                        return Err(Error::Unsupported("upsampling above input resolution".into()));
                    }
                    scale /= r;
                }
                LayerSpec::MalleConv(cfg) => div = lcm(div, scale * cfg.divisor()),
                _ => {}
            }
        }
        Ok(div)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn is_residual(&self) -> bool {
        self.residual
    }

    /// Inputs are reflect-padded to a multiple of this before the layers run.
    pub fn divisor(&self) -> usize {
        self.divisor
    }

    pub fn level_starts(&self) -> &[usize] {
        &self.level_starts
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Indices of MalleConv layers.
    pub fn malle_layers(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| matches!(l, LayerSpec::MalleConv(_))).map(|(i, _)| i).collect()
    }

    /// Output shape of every layer for an input of shape `input` (already padded).
    pub fn shape_check(&self, input: Shape) -> Result<Vec<Shape>> {
        if input.c != self.in_channels {
            return Err(Error::ShapeMismatch { op: "model input channels", lhs: input, rhs: input.with_c(self.in_channels) });
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let prev = if i == 0 { input } else { shapes[i - 1] };
            let src = l.source().map(|r| match r {
                NodeRef::Input => input,
                NodeRef::Layer(j) => shapes[j],
            });
            let s = l.output_shape(prev, src).map_err(|e| Error::Config(format!("layer {i} ({l:?}): {e}")))?;
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Re-initializes every parameter: He-normal conv weights, zero biases,
    /// identity-initialized MalleConv predictors. Parameter `name` draws from
    /// `Rng::keyed(seed, name)`, so equally named parameters of different
    /// graphs get equal values.
    pub fn init_weights(&mut self, seed: u64) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let gain = if Some(i) == self.head { HEAD_INIT_GAIN } else { 1.0 };
            for (local, _) in l.param_shapes() {
                let name = format!("l{i}.{local}");
                let mut rng = Rng::keyed(seed, &name);
                let t = match l {
                    LayerSpec::Conv(spec) if local == "w" => he_normal(spec, gain, &mut rng),
                    LayerSpec::InvertedBottleneck { channels, expansion } if local.ends_with(".w") => {
                        let which = local.trim_end_matches(".w");
                        let (_, spec) = LayerSpec::bottleneck_convs(*channels, *expansion)
                            .into_iter()
                            .find(|(n, _)| *n == which)
                            .expect("bottleneck conv");
                        he_normal(&spec, if which == "project" { BOTTLENECK_PROJECT_GAIN } else { 1.0 }, &mut rng)
                    }
                    LayerSpec::MalleConv(cfg) => cfg.init_param(local.trim_start_matches("malle."), &mut rng)?,
                    _ => Tensor::zeros(self.params.map[&name].shape()),
                };
                self.params.map.insert(name, t);
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Pads to [`Self::divisor`], runs the
    /// layers, forms `x − net(x)` for residual models and crops back.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, opts: &ForwardOptions) -> Result<ForwardTrace> {
        let xs = tape.value(x).shape();
        if xs.c != self.in_channels {
            return Err(Error::ShapeMismatch { op: "model input channels", lhs: xs, rhs: xs.with_c(self.in_channels) });
        }
        let (ph, pw) = (xs.h.div_ceil(self.divisor) * self.divisor, xs.w.div_ceil(self.divisor) * self.divisor);
        let input = if (ph, pw) != (xs.h, xs.w) { tape.reflect_pad(x, ph, pw)? } else { x };

        let param = |tape: &mut Tape, name: &str| -> Result<Var> {
            let t = self.params.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?.clone();
            if opts.trainable {
                tape.param(name, t)
            } else {
                Ok(tape.constant(t))
            }
        };
        let mut outs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut malle = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let h = if i == 0 { input } else { outs[i - 1] };
            let node = |r: NodeRef| match r {
                NodeRef::Input => input,
                NodeRef::Layer(j) => outs[j],
            };
            let out = match l {
                LayerSpec::Conv(spec) => {
                    let w = param(tape, &format!("l{i}.w"))?;
                    let b = param(tape, &format!("l{i}.b"))?;
                    tape.conv2d(h, spec, w, Some(b))?
                }
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::InvertedBottleneck { channels, expansion } => {
                    let mut y = h;
                    for (j, (name, spec)) in LayerSpec::bottleneck_convs(*channels, *expansion).iter().enumerate() {
                        let w = param(tape, &format!("l{i}.{name}.w"))?;
                        let b = param(tape, &format!("l{i}.{name}.b"))?;
                        y = tape.conv2d(y, spec, w, Some(b))?;
                        if j < 2 {
                            y = tape.relu(y)?;
                        }
                    }
                    tape.add(h, y)?
                }
                LayerSpec::MalleConv(cfg) => {
                    let mut pp = |tape: &mut Tape, n: &str| param(tape, &format!("l{i}.malle.{n}"));
                    let grid = predictor_tape(tape, h, cfg, &mut pp)?;
                    let out = match opts.swap {
                        Some(s) if s.layer == i => {
                            let g = KernelGrid::new(tape.value(grid).clone(), cfg.k)?;
                            let z = kernel_swap_apply(tape.value(h), &g, s.row, s.col)?;
                            tape.constant(z)
                        }
                        _ => tape.slice_apply(h, grid, cfg.k)?,
                    };
                    malle.push(MalleTrace { layer: i, input: h, grid, output: out });
                    out
                }
                LayerSpec::SpaceToChannel(r) => tape.space_to_channel(h, *r)?,
                LayerSpec::ChannelToSpace(r) => tape.channel_to_space(h, *r)?,
                LayerSpec::BilinearUp(r) => {
                    let s = tape.value(h).shape();
                    tape.bilinear_resize(h, s.h * r, s.w * r)?
                }
                LayerSpec::Concat(src) => tape.concat(h, node(*src))?,
                LayerSpec::Add(src) => tape.add(h, node(*src))?,
            };
            outs.push(out);
        }
        if let Some(s) = opts.swap {
            if !matches!(self.layers.get(s.layer), Some(LayerSpec::MalleConv(_))) {
                return Err(Error::OutOfRange(format!("layer {} is not a MalleConv layer", s.layer)));
            }
        }
        let mut y = *outs.last().ok_or_else(|| Error::Config("empty model".into()))?;
        if self.residual {
            y = tape.sub(input, y)?;
        }
        if (ph, pw) != (xs.h, xs.w) {
            y = tape.crop(y, xs.h, xs.w)?;
        }
        Ok(ForwardTrace { output: y, malle })
    }

    /// Inference on a batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with(x, &ForwardOptions::default())?.0)
    }

    /// Inference returning the output and every MalleConv layer's internals.
    pub fn forward_with(&self, x: &Tensor, opts: &ForwardOptions) -> Result<(Tensor, Vec<MalleCapture>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let trace = self.forward_tape(&mut tape, xv, opts)?;
        let captures = trace
            .malle
            .iter()
            .map(|m| {
                let k = match &self.layers[m.layer] {
                    LayerSpec::MalleConv(cfg) => cfg.k,
                    _ => unreachable!("traced layer is a MalleConv"),
                };
                Ok(MalleCapture {
                    layer: m.layer,
                    input: tape.value(m.input).clone(),
                    grid: KernelGrid::new(tape.value(m.grid).clone(), k)?,
                    output: tape.value(m.output).clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok((tape.value(trace.output).clone(), captures))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.config.to_text(), tensors: self.params.map.clone() }
    }

    /// Rebuilds the graph from the embedded config and loads its parameters.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut g = ModelConfig::from_text(&ck.config)?.build()?;
        if ck.tensors.len() != g.params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", g.params.len(), ck.tensors.len())));
        }
        for (name, t) in &ck.tensors {
            g.params.set(name, t.clone()).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        }
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
