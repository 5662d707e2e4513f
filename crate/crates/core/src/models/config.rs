//! Canonical text form of a model configuration.
//!
//! One `key=value` per line in a fixed key order, so equal configs always
//! serialize to identical bytes. This text is stored in checkpoints and is
//! enough to rebuild the graph.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    DnCnn,
    MalleNet,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::DnCnn => "dncnn",
            Arch::MalleNet => "mallenet",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dncnn" => Ok(Arch::DnCnn),
            "mallenet" => Ok(Arch::MalleNet),
            _ => Err(Error::Config(format!("unknown arch `{s}` (expected dncnn or mallenet)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_channels: usize,
    pub channels: usize,
    /// DnCNN: number of convolutions.
    pub depth: usize,
    /// DnCNN: replace the middle convolution with a MalleConv.
    pub malle_mid: bool,
    /// MalleNet: inverted bottlenecks per pyramid level.
    pub blocks: usize,
    /// MalleNet: pyramid levels.
    pub levels: usize,
    /// MalleNet: inverted bottleneck expansion ratio.
    pub expansion: usize,
    /// MalleConv kernel size.
    pub k: usize,
    pub predictor_width: usize,
    /// Predictor average-pooling factor; 0 and 1 both mean no pooling.
    pub pool: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::MalleNet,
            in_channels: 3,
            channels: 16,
            depth: 3,
            malle_mid: false,
            blocks: 2,
            levels: 3,
            expansion: 2,
            k: 1,
            predictor_width: 16,
            pool: 4,
        }
    }
}

pub const KEYS: [&str; 11] =
    ["arch", "in_channels", "channels", "depth", "malle", "blocks", "levels", "expansion", "k", "predictor_width", "pool"];

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| Error::Config(format!("`{key}` expects a non-negative integer, got `{value}`")))
}

impl ModelConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "arch" => self.arch = value.parse()?,
            "malle" => {
                self.malle_mid = match value {
                    "none" => false,
                    "mid" => true,
                    _ => return Err(Error::Config(format!("`malle` expects none or mid, got `{value}`"))),
                }
            }
            "in_channels" => self.in_channels = parse_usize(key, value)?,
            "channels" => self.channels = parse_usize(key, value)?,
            "depth" => self.depth = parse_usize(key, value)?,
            "blocks" => self.blocks = parse_usize(key, value)?,
            "levels" => self.levels = parse_usize(key, value)?,
            "expansion" => self.expansion = parse_usize(key, value)?,
            "k" => self.k = parse_usize(key, value)?,
            "predictor_width" => self.predictor_width = parse_usize(key, value)?,
            "pool" => self.pool = parse_usize(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "arch" => self.arch.to_string(),
            "malle" => if self.malle_mid { "mid" } else { "none" }.to_string(),
            "in_channels" => self.in_channels.to_string(),
            "channels" => self.channels.to_string(),
            "depth" => self.depth.to_string(),
            "blocks" => self.blocks.to_string(),
            "levels" => self.levels.to_string(),
            "expansion" => self.expansion.to_string(),
            "k" => self.k.to_string(),
            "predictor_width" => self.predictor_width.to_string(),
            "pool" => self.pool.to_string(),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped,
    /// absent keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = ModelConfig::default();
        c.set("arch", "dncnn").unwrap();
        c.set("malle", "mid").unwrap();
        c.set("pool", "8").unwrap();
        let text = c.to_text();
        assert_eq!(ModelConfig::from_text(&text).unwrap(), c);
        assert!(text.starts_with("arch=dncnn\n"));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ModelConfig::from_text("width=3").is_err());
        assert!(ModelConfig::from_text("channels").is_err());
        assert!(ModelConfig::from_text("channels=-1").is_err());
        assert!(ModelConfig::from_text("arch=unet").is_err());
    }
}
