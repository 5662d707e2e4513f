//! Analytic FLOP counts with one multiply-accumulate counted as 2 FLOPs.
//!
//! | layer | FLOPs |
//! |---|---|
//! | conv | `2·h'·w'·k²·c_in·c_out` (bias not counted) |
//! | depthwise conv | `2·h'·w'·k²·c` |
//! | relu, add, residual subtraction | 1 per output element |
//! | average / max pooling | 1 per input element |
//! | bilinear upsampling | 8 per output element (4 taps, multiply + add) |
//! | fused slice | `h·w·(2·4·(k²+1)·c + 2·k²·c)` |
//! | shuffles, concat, pad, crop | 0 |
//!
//! Models are counted at their padded input size.

use crate::error::{Error, Result};
use crate::malleconv::{PredictorConfig, RES_BLOCKS};
use crate::models::{LayerSpec, ModelGraph};
use crate::ops::ConvSpec;
use crate::tensor::Shape;

fn elems(s: Shape) -> u64 {
    s.numel() as u64
}

pub fn conv_flops(spec: &ConvSpec, out: Shape) -> u64 {
    let taps = (spec.k * spec.k) as u64;
    let per_pixel = if spec.depthwise { taps * spec.c_out as u64 } else { taps * (spec.c_in * spec.c_out) as u64 };
    2 * (out.n * out.h * out.w) as u64 * per_pixel
}

/// Per-pixel bilinear blend of the `(k²+1)·c` packed grid values plus the depthwise apply.
pub fn fused_slice_flops(x: Shape, k: usize) -> u64 {
    let (kk, c) = ((k * k) as u64, x.c as u64);
    (x.n * x.h * x.w) as u64 * (2 * 4 * (kk + 1) * c + 2 * kk * c)
}

/// Predictor trunk on input `x`, excluding the slice.
pub fn predictor_flops(cfg: &PredictorConfig, x: Shape) -> u64 {
    let mut total = 0;
    let mut s = x;
    if cfg.pool > 1 {
        total += elems(s);
        s = Shape::new(s.n, s.h / cfg.pool, s.w / cfg.pool, s.c);
    }
    let convs = cfg.convs();
    s = s.with_c(cfg.width);
    total += conv_flops(&convs[0].1, s) + elems(s);
    for block in convs[1..1 + 2 * RES_BLOCKS].chunks_exact(2) {
        // conv, relu, conv, add, relu
        total += conv_flops(&block[0].1, s) + elems(s) + conv_flops(&block[1].1, s) + 2 * elems(s);
    }
    total += elems(s);
    let g = Shape::new(s.n, s.h / 2, s.w / 2, cfg.exit_channels());
    total + conv_flops(&convs[convs.len() - 1].1, g)
}

/// FLOPs of one layer given its input and output shapes.
pub fn layer_flops(layer: &LayerSpec, input: Shape, output: Shape) -> u64 {
    match layer {
        LayerSpec::Conv(spec) => conv_flops(spec, output),
        LayerSpec::Relu | LayerSpec::Add(_) => elems(output),
        LayerSpec::InvertedBottleneck { channels, expansion } => {
            let wide = input.with_c(channels * expansion);
            let convs = [
                ConvSpec::same(1, *channels, wide.c),
                ConvSpec::depthwise(crate::models::graph::BOTTLENECK_DW_K, wide.c),
                ConvSpec::same(1, wide.c, *channels),
            ];
            conv_flops(&convs[0], wide) + conv_flops(&convs[1], wide) + conv_flops(&convs[2], output) + 2 * elems(wide) + elems(output)
        }
        LayerSpec::MalleConv(cfg) => predictor_flops(cfg, input) + fused_slice_flops(input, cfg.k),
        LayerSpec::BilinearUp(_) => 8 * elems(output),
        LayerSpec::SpaceToChannel(_) | LayerSpec::ChannelToSpace(_) | LayerSpec::Concat(_) => 0,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    /// Layer index, or `None` for the residual subtraction.
    pub layer: Option<usize>,
    pub name: String,
    pub flops: u64,
}

fn layer_name(l: &LayerSpec) -> String {
    match l {
        LayerSpec::Conv(s) if s.depthwise => format!("dwconv{}x{} {}", s.k, s.k, s.c_out),
        LayerSpec::Conv(s) => format!("conv{}x{} {}->{}", s.k, s.k, s.c_in, s.c_out),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::InvertedBottleneck { channels, expansion } => format!("bottleneck {channels}x{expansion}"),
        LayerSpec::MalleConv(c) => format!("malleconv k{} pool{}", c.k, c.pool),
        LayerSpec::SpaceToChannel(r) => format!("space_to_channel {r}"),
        LayerSpec::ChannelToSpace(r) => format!("channel_to_space {r}"),
        LayerSpec::BilinearUp(r) => format!("bilinear_up {r}"),
        LayerSpec::Concat(_) => "concat".into(),
        LayerSpec::Add(_) => "add".into(),
    }
}

/// Per-layer FLOPs for a single `h × w` image, at the padded size.
pub fn flop_breakdown(m: &ModelGraph, h: usize, w: usize) -> Result<Vec<LayerFlops>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidShape(format!("count_flops at {h}x{w}")));
    }
    let d = m.divisor();
    let input = Shape::new(1, h.div_ceil(d) * d, w.div_ceil(d) * d, m.in_channels());
    let shapes = m.shape_check(input)?;
    let mut out: Vec<LayerFlops> = m
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let x = if i == 0 { input } else { shapes[i - 1] };
            LayerFlops { layer: Some(i), name: layer_name(l), flops: layer_flops(l, x, shapes[i]) }
        })
        .collect();
    if m.is_residual() {
        out.push(LayerFlops { layer: None, name: "residual".into(), flops: elems(input) });
    }
    Ok(out)
}

pub fn count_flops(m: &ModelGraph, h: usize, w: usize) -> Result<u64> {
    Ok(flop_breakdown(m, h, w)?.iter().map(|l| l.flops).sum())
}

/// Closed-form FLOP and auxiliary-element costs of one dynamic depthwise
/// layer on an `h × w × c` map with `k × k` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostModel {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub predictor: PredictorConfig,
}

impl CostModel {
    pub fn new(h: usize, w: usize, c: usize, k: usize) -> Self {
        CostModel { h, w, c, k, predictor: PredictorConfig::new(k, c) }
    }

    fn input(&self) -> Shape {
        Shape::new(1, self.h, self.w, self.c)
    }

    fn packed(&self) -> u64 {
        ((self.k * self.k + 1) * self.c) as u64
    }

    pub fn static_conv_flops(&self) -> u64 {
        conv_flops(&ConvSpec::same(self.k, self.c, self.c), self.input())
    }

    pub fn depthwise_flops(&self) -> u64 {
        conv_flops(&ConvSpec::depthwise(self.k, self.c), self.input())
    }

    pub fn predictor_flops(&self) -> u64 {
        predictor_flops(&self.predictor, self.input())
    }

    pub fn fused_flops(&self) -> u64 {
        self.predictor_flops() + fused_slice_flops(self.input(), self.k)
    }

    /// The naive path performs the same arithmetic as the fused one.
    pub fn naive_flops(&self) -> u64 {
        self.fused_flops()
    }

    /// Grid held by the fused path: `(h/d)·(w/d)·(k²+1)·c`.
    pub fn fused_kernel_map_elems(&self) -> u64 {
        let (gh, gw) = self.predictor.grid_dims(self.h, self.w);
        (gh * gw) as u64 * self.packed()
    }

    /// Full-resolution map materialized by the naive path: `h·w·(k²+1)·c`.
    pub fn naive_kernel_map_elems(&self) -> u64 {
        (self.h * self.w) as u64 * self.packed()
    }

    /// Per-pixel kernel prediction: the trunk at full resolution without
    /// pooling, a per-pixel exit conv, then a direct apply.
    pub fn hypernetwork_flops(&self) -> u64 {
        let x = self.input();
        let convs = self.predictor.convs();
        let t = x.with_c(self.predictor.width);
        let mut total = conv_flops(&convs[0].1, t) + elems(t);
        for block in convs[1..1 + 2 * RES_BLOCKS].chunks_exact(2) {
            total += conv_flops(&block[0].1, t) + elems(t) + conv_flops(&block[1].1, t) + 2 * elems(t);
        }
        total += conv_flops(&convs[convs.len() - 1].1, x.with_c(self.packed() as usize));
        total + 2 * (self.h * self.w) as u64 * (self.k * self.k * self.c) as u64
    }

    /// Per-pixel kernel map plus one full-resolution trunk activation.
    pub fn hypernetwork_aux_elems(&self) -> u64 {
        self.naive_kernel_map_elems() + (self.h * self.w * self.predictor.width) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_dncnn, MalleInsert};

    #[test]
    fn single_conv_example() {
        assert_eq!(conv_flops(&ConvSpec::same(3, 1, 1), Shape::new(1, 4, 4, 1)), 288);
    }

    #[test]
    fn cost_model_ratio_is_64() {
        for (h, c, k) in [(256, 16, 1), (256, 16, 3), (64, 3, 5), (128, 8, 3)] {
            let m = CostModel::new(h, h, c, k);
            assert_eq!(m.naive_kernel_map_elems(), 64 * m.fused_kernel_map_elems());
            assert!(m.hypernetwork_flops() >= m.fused_flops());
            assert!(m.hypernetwork_aux_elems() >= m.fused_kernel_map_elems());
        }
    }

    #[test]
    fn dncnn_breakdown_sums() {
        let m = build_dncnn(3, 16, MalleInsert::Mid(3)).unwrap();
        let parts = flop_breakdown(&m, 64, 64).unwrap();
        assert_eq!(parts.iter().map(|p| p.flops).sum::<u64>(), count_flops(&m, 64, 64).unwrap());
        assert_eq!(parts.last().unwrap().name, "residual");
        assert_eq!(parts[0].flops, 2 * 64 * 64 * 9 * 3 * 16);
    }
}
