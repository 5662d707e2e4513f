//! Training and data settings in the same canonical `key=value` form as
//! [`ModelConfig`](crate::models::ModelConfig).

use std::path::PathBuf;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Square patch side in pixels; a multiple of the model divisor.
    pub patch: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Noise levels on the 0–255 scale.
    pub sigmas: Vec<f32>,
    /// Draw σ from `sigmas` every iteration; otherwise exactly one σ is trained.
    pub blind: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch: 4,
            patch: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sigmas: vec![25.0],
            blind: false,
            seed: 0,
            checkpoint_every: 500,
            eval_every: 100,
            clip: 1.0,
        }
    }
}

pub const TRAIN_KEYS: [&str; 13] = [
    "iterations",
    "batch",
    "patch",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "sigmas",
    "blind",
    "seed",
    "checkpoint_every",
    "eval_every",
    "clip",
];

pub(crate) fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}` expects {what}, got `{value}`")))
}

fn parse_finite(key: &str, value: &str) -> Result<f32> {
    let v: f32 = parse(key, value, "a number")?;
    if !v.is_finite() {
        return Err(Error::Config(format!("`{key}` must be finite, got `{value}`")));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value, "an integer")?,
            "batch" => self.batch = parse(key, value, "an integer")?,
            "patch" => self.patch = parse(key, value, "an integer")?,
            "lr" => self.lr = parse_finite(key, value)?,
            "beta1" => self.beta1 = parse_finite(key, value)?,
            "beta2" => self.beta2 = parse_finite(key, value)?,
            "eps" => self.eps = parse_finite(key, value)?,
            "sigmas" => self.sigmas = value.split(',').map(|s| parse_finite(key, s)).collect::<Result<_>>()?,
            "blind" => self.blind = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value, "an integer")?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value, "an integer")?,
            "eval_every" => self.eval_every = parse(key, value, "an integer")?,
            "clip" => self.clip = parse_finite(key, value)?,
            _ => return Err(Error::Config(format!("unknown train key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "iterations" => self.iterations.to_string(),
            "batch" => self.batch.to_string(),
            "patch" => self.patch.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "sigmas" => self.sigmas.iter().map(f32::to_string).collect::<Vec<_>>().join(","),
            "blind" => self.blind.to_string(),
            "seed" => self.seed.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "clip" => self.clip.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch == 0 || self.patch == 0 {
            return bad(format!("batch and patch must be positive, got {} and {}", self.batch, self.patch));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("lr and eps must be positive, betas in [0, 1)".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| !(s > 0.0 && s <= 255.0)) {
            return bad(format!("sigmas must lie in (0, 255], got {:?}", self.sigmas));
        }
        if !self.blind && self.sigmas.len() != 1 {
            return bad(format!("per-sigma training takes exactly one sigma, got {:?}; set blind=true", self.sigmas));
        }
        if self.clip < 0.0 {
            return bad(format!("clip must be >= 0, got {}", self.clip));
        }
        Ok(())
    }
}

/// Training corpus: synthetic unless `dir` names a folder of PPM/PGM files.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_images: usize,
    pub val_images: usize,
    /// Side of each synthetic image.
    pub size: usize,
    pub corpus_seed: u64,
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_images: 32, val_images: 4, size: 64, corpus_seed: 1, dir: None }
    }
}

pub const DATA_KEYS: [&str; 5] = ["train_images", "val_images", "size", "corpus_seed", "dir"];

impl DataConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_images" => self.train_images = parse(key, value, "an integer")?,
            "val_images" => self.val_images = parse(key, value, "an integer")?,
            "size" => self.size = parse(key, value, "an integer")?,
            "corpus_seed" => self.corpus_seed = parse(key, value, "an integer")?,
            "dir" => self.dir = Some(value.trim()).filter(|v| !v.is_empty()).map(PathBuf::from),
            _ => return Err(Error::Config(format!("unknown data key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "train_images" => self.train_images.to_string(),
            "val_images" => self.val_images.to_string(),
            "size" => self.size.to_string(),
            "corpus_seed" => self.corpus_seed.to_string(),
            "dir" => self.dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            _ => return None,
        })
    }
}
