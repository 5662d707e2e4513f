//! Builders for the DnCNN and MalleNet backbones.

use crate::error::{Error, Result};
use crate::malleconv::PredictorConfig;
use crate::models::config::{Arch, ModelConfig};
use crate::models::graph::{LayerSpec, ModelGraph, NodeRef};
use crate::ops::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MalleInsert {
    None,
    /// Replace the middle convolution with a MalleConv of this kernel size.
    Mid(usize),
}

impl ModelConfig {
    fn predictor(&self, channels: usize) -> PredictorConfig {
        PredictorConfig { k: self.k, channels, width: self.predictor_width, pool: self.pool.max(1) }
    }

    pub fn build(&self) -> Result<ModelGraph> {
        if self.in_channels == 0 || self.channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        match self.arch {
            Arch::DnCnn => self.build_dncnn(),
            Arch::MalleNet => self.build_mallenet(),
        }
    }

    /// `depth` convolutions with ReLU between them. With `malle_mid`, conv
    /// number `⌈depth/2⌉` (1-based) becomes a MalleConv and keeps its ReLU.
    fn build_dncnn(&self) -> Result<ModelGraph> {
        let (d, c, cin) = (self.depth, self.channels, self.in_channels);
        if d < 2 {
            return Err(Error::Config(format!("dncnn depth must be >= 2, got {d}")));
        }
        let mid = d.div_ceil(2) - 1;
        if self.malle_mid && (mid == 0 || mid == d - 1) {
            return Err(Error::Config(format!("dncnn depth {d} has no interior convolution to replace")));
        }
        let mut layers = Vec::with_capacity(2 * d - 1);
        for i in 0..d {
            let c_in = if i == 0 { cin } else { c };
            let c_out = if i == d - 1 { cin } else { c };
            if self.malle_mid && i == mid {
                layers.push(LayerSpec::MalleConv(self.predictor(c)));
            } else {
                layers.push(LayerSpec::Conv(ConvSpec::same(3, c_in, c_out)));
            }
            if i < d - 1 {
                layers.push(LayerSpec::Relu);
            }
        }
        ModelGraph::new(self.clone(), layers, cin, true, vec![0])
    }

    /// Pyramid of `levels` resolutions built with 2× space-to-channel.
    ///
    /// Coarsest level first: a 1×1 entry conv, `blocks` inverted bottlenecks
    /// with one MalleConv inserted mid-stack, and 2× bilinear upsampling.
    /// Each finer level concatenates the upsampled features with its own
    /// shuffled input and projects back to `channels` with a 1×1 conv. A
    /// 3×3 head predicts the residual.
    fn build_mallenet(&self) -> Result<ModelGraph> {
        let (c, cin, levels) = (self.channels, self.in_channels, self.levels);
        if c < 4 || levels == 0 || self.blocks == 0 || self.expansion == 0 {
            return Err(Error::Config(format!(
                "mallenet needs channels >= 4 and positive levels/blocks/expansion, got {c}/{levels}/{}/{}",
                self.blocks, self.expansion
            )));
        }
        let mut layers = Vec::new();
        let mut shuffled = vec![NodeRef::Input];
        for _ in 1..levels {
            layers.push(LayerSpec::SpaceToChannel(2));
            shuffled.push(NodeRef::Layer(layers.len() - 1));
        }
        let mut starts = Vec::with_capacity(levels);
        for l in (0..levels).rev() {
            starts.push(layers.len());
            let level_in = cin << (2 * l);
            if l == levels - 1 {
                layers.push(LayerSpec::Conv(ConvSpec::same(1, level_in, c)));
            } else {
                layers.push(LayerSpec::Concat(shuffled[l]));
                layers.push(LayerSpec::Conv(ConvSpec::same(1, c + level_in, c)));
            }
            for b in 0..self.blocks {
                if b == self.blocks / 2 {
                    layers.push(LayerSpec::MalleConv(self.predictor(c)));
                }
                layers.push(LayerSpec::InvertedBottleneck { channels: c, expansion: self.expansion });
            }
            if l > 0 {
                layers.push(LayerSpec::BilinearUp(2));
            }
        }
        layers.push(LayerSpec::Conv(ConvSpec::same(3, c, cin)));
        starts.reverse();
        ModelGraph::new(self.clone(), layers, cin, true, starts)
    }
}

pub fn build_dncnn(depth: usize, channels: usize, malle: MalleInsert) -> Result<ModelGraph> {
    let (malle_mid, k) = match malle {
        MalleInsert::None => (false, 1),
        MalleInsert::Mid(k) => (true, k),
    };
    ModelConfig { arch: Arch::DnCnn, depth, channels, malle_mid, k, ..ModelConfig::default() }.build()
}

pub fn build_mallenet(channels: usize, blocks_per_level: usize, k: usize, levels: usize) -> Result<ModelGraph> {
    ModelConfig { arch: Arch::MalleNet, channels, blocks: blocks_per_level, k, levels, ..ModelConfig::default() }.build()
}
