//! Flat `section.key=value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! model.arch=dncnn
//! model.malle=mid
//! train.iterations=2000
//! data.size=64
//! bench.pools=0,2,4,8
//! ```
//!
//! Every key has a typed default; unknown sections or keys are rejected.

use std::fmt::Write;
use std::path::Path;

use malle_core::models::config::KEYS as MODEL_KEYS;
use malle_core::models::ModelConfig;
use malle_core::train::{DataConfig, TrainConfig, DATA_KEYS, TRAIN_KEYS};

use crate::error::CliError;

/// Sweep settings for `bench`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Square input side.
    pub size: usize,
    pub channels: usize,
    pub ks: Vec<usize>,
    pub pools: Vec<usize>,
    /// Backbone depth for the pooling ablation.
    pub depth: usize,
    pub reps: usize,
    pub warmup: usize,
    pub latency: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { size: 256, channels: 16, ks: vec![1, 3], pools: vec![0, 2, 4, 8], depth: 3, reps: 5, warmup: 1, latency: true }
    }
}

pub const BENCH_KEYS: [&str; 8] = ["size", "channels", "ks", "pools", "depth", "reps", "warmup", "latency"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config(format!("`bench.{key}` cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl BenchConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "size" => self.size = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "ks" => self.ks = parse_list(key, value)?,
            "pools" => self.pools = parse_list(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "latency" => self.latency = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key `bench.{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "size" => self.size.to_string(),
            "channels" => self.channels.to_string(),
            "ks" => join(&self.ks),
            "pools" => join(&self.pools),
            "depth" => self.depth.to_string(),
            "reps" => self.reps.to_string(),
            "warmup" => self.warmup.to_string(),
            "latency" => self.latency.to_string(),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| CliError::Config(format!("key `{key}` needs a section prefix (model., train., data. or bench.)")))?;
        match section {
            "model" => self.model.set(name, value)?,
            "train" => self.train.set(name, value)?,
            "data" => self.data.set(name, value)?,
            "bench" => self.bench.set(name, value)?,
            _ => return Err(CliError::Config(format!("unknown config section `{section}` in `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (section, name) = key.split_once('.')?;
        match section {
            "model" => self.model.get(name),
            "train" => self.train.get(name),
            "data" => self.data.get(name),
            "bench" => self.bench.get(name),
            _ => None,
        }
    }

    /// Every key in schema order.
    pub fn keys() -> Vec<String> {
        let section = |s: &str, keys: &[&str]| keys.iter().map(|k| format!("{s}.{k}")).collect::<Vec<_>>();
        [section("model", &MODEL_KEYS), section("train", &TRAIN_KEYS), section("data", &DATA_KEYS), section("bench", &BENCH_KEYS)].concat()
    }

    /// Applies `key=value` lines; `origin` names the source in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value, got `{line}`", no + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `--set` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::keys() {
            let _ = writeln!(out, "{k}={}", self.get(&k).expect("schema key"));
        }
        out
    }
}

/// The schema with defaults, for `--help`.
pub fn schema() -> String {
    let mut out = String::from("Config keys (file lines or --set key=value), with defaults:\n");
    for line in RunConfig::default().to_text().lines() {
        let _ = writeln!(out, "  {line}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# run\nmodel.arch=dncnn\n\ntrain.iterations = 7\nbench.pools=0,4\ndata.dir=imgs\n", "test").unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.bench.pools, [0, 4]);
        assert_eq!(cfg.train.iterations, 7);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = RunConfig::default();
        for bad in ["model.width=3", "optim.lr=1", "iterations=3", "train.iterations", "bench.ks=1,x", "train.lr=nan"] {
            assert!(cfg.apply_text(bad, "t").is_err(), "{bad}");
        }
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "train.seed=4\ntrain.iterations=9\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.seed=5".into()]).unwrap();
        assert_eq!((cfg.train.seed, cfg.train.iterations), (5, 9));
    }

    #[test]
    fn schema_lists_every_key() {
        let s = schema();
        assert!(RunConfig::keys().iter().all(|k| s.contains(&format!("{k}="))));
    }
}
