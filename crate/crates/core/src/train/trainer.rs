//! The training loop, its on-disk layout and exact resume.
//!
//! Files written under the output directory:
//!
//! | file | content |
//! |---|---|
//! | `init.mckp` | model before the first update |
//! | `last.mckp` | model after the most recent completed iteration |
//! | `best.mckp` | model with the best validation PSNR so far |
//! | `state.mstate` | parameters, Adam moments, RNG state and counters |
//! | `loss.csv` | `iter,loss,lr,psnr`, psnr filled on evaluation iterations |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::{add_awgn_tensor, augment, load_image, random_patch, synth_corpus, Image};
use crate::error::{Error, Result};
use crate::models::{Denoiser, ForwardOptions, Identity, ModelGraph};
use crate::rng::{fnv1a, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::config::{DataConfig, TrainConfig, TRAIN_KEYS};
use crate::train::eval::evaluate;
use crate::train::optim::{adam_step, check_finite, clip_global_norm, cosine_lr, AdamConfig, AdamState};

pub const LOSS_HEADER: &str = "iter,loss,lr,psnr";
const STATE_FILE: &str = "state.mstate";
const LOSS_FILE: &str = "loss.csv";

/// Clean training and validation images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Image>,
    pub val: Vec<Image>,
    /// Seed of the validation noise.
    pub val_seed: u64,
}

fn is_pnm(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "pnm"))
}

impl Dataset {
    /// Synthetic corpus, or the sorted PPM/PGM files of `cfg.dir` with the
    /// last `val_images` held out.
    pub fn load(cfg: &DataConfig) -> Result<Self> {
        let mut all = match &cfg.dir {
            None => synth_corpus(cfg.train_images + cfg.val_images, cfg.size, cfg.corpus_seed)?,
            Some(dir) => {
                let mut paths: Vec<PathBuf> =
                    fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
                paths.retain(|p| is_pnm(p));
                paths.sort();
                paths.iter().map(load_image).collect::<Result<Vec<_>>>()?
            }
        };
        if all.len() <= cfg.val_images {
            return Err(Error::Config(format!("{} images leave none for training after {} validation images", all.len(), cfg.val_images)));
        }
        let val = all.split_off(all.len() - cfg.val_images);
        Ok(Dataset { train: all, val, val_seed: cfg.corpus_seed })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `state.mstate` in the output directory.
    pub resume: bool,
    /// Save state and return after this iteration.
    pub stop_at: Option<usize>,
    /// Print a line to stderr on evaluation iterations.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// Last completed iteration.
    pub step: usize,
    pub last_loss: Option<f32>,
    pub last_psnr: Option<f64>,
    pub best_psnr: Option<f64>,
    /// Mean PSNR of the noisy validation inputs.
    pub noisy_psnr: f64,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub rng: Rng,
    pub adam: AdamState,
    pub best_psnr: Option<f64>,
    /// Fingerprint of the model and training configuration.
    pub fingerprint: u64,
}

fn fingerprint(model: &ModelGraph, cfg: &TrainConfig) -> u64 {
    let mut text = model.config().to_text();
    for k in TRAIN_KEYS.iter().filter(|k| !matches!(**k, "iterations" | "checkpoint_every")) {
        let _ = writeln!(text, "{k}={}", cfg.get(k).expect("train key"));
    }
    fnv1a(text.as_bytes())
}

impl TrainState {
    fn to_checkpoint(&self, model: &ModelGraph) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (name, p) in model.params().iter() {
            tensors.insert(format!("param/{name}"), p.clone());
            for (tag, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
                if let Some(v) = moments.get(name) {
                    tensors.insert(format!("adam.{tag}/{name}"), Tensor::new(p.shape(), v.clone())?);
                }
            }
        }
        let best = self.best_psnr.map(|b| format!("{:016x}", b.to_bits())).unwrap_or_default();
        let config = format!(
            "step={}\nrng={}\nadam_t={}\nbest_psnr={best}\nfingerprint={}\n",
            self.step,
            self.rng.state(),
            self.adam.t,
            self.fingerprint
        );
        Ok(Checkpoint { config, tensors })
    }

    /// Restores the state and writes the saved parameters into `model`.
    fn from_checkpoint(ck: &Checkpoint, model: &mut ModelGraph) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("training state: {m}"));
        let fields: BTreeMap<&str, &str> = ck.config.lines().filter_map(|l| l.split_once('=')).collect();
        let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| field(k)?.parse::<u64>().map_err(|_| bad(format!("bad `{k}`")));
        let best = match field("best_psnr")? {
            "" => None,
            hex => Some(f64::from_bits(u64::from_str_radix(hex, 16).map_err(|_| bad("bad `best_psnr`".into()))?)),
        };
        let mut adam = AdamState { t: num("adam_t")?, ..AdamState::default() };
        for (name, t) in &ck.tensors {
            let (kind, pname) = name.split_once('/').ok_or_else(|| bad(format!("tensor `{name}`")))?;
            match kind {
                "param" => model.params_mut().set(pname, t.clone())?,
                "adam.m" => drop(adam.m.insert(pname.to_string(), t.data().to_vec())),
                "adam.v" => drop(adam.v.insert(pname.to_string(), t.data().to_vec())),
                _ => return Err(bad(format!("tensor `{name}`"))),
            }
        }
        Ok(TrainState { step: num("step")? as usize, rng: Rng::new(num("rng")?), adam, best_psnr: best, fingerprint: num("fingerprint")? })
    }
}

/// Draws one training batch: random image, crop, dihedral transform, then
/// noise at one σ for the whole batch. Returns `(noisy, clean)`.
pub fn sample_batch(data: &[Image], cfg: &TrainConfig, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    let mut patches = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let img = &data[rng.below(data.len())];
        let p = random_patch(img, cfg.patch, rng)?;
        patches.push(augment(&p, rng.below(8))?.to_tensor());
    }
    let clean = Tensor::stack(&patches)?;
    let sigma = if cfg.blind { cfg.sigmas[rng.below(cfg.sigmas.len())] } else { cfg.sigmas[0] };
    Ok((add_awgn_tensor(&clean, sigma, rng)?, clean))
}

/// Mean validation PSNR over the configured noise levels, and the
/// matching noisy-input PSNR.
fn validate(model: &dyn Denoiser, data: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let (mut p, mut n) = (0.0, 0.0);
    for &s in &cfg.sigmas {
        let r = evaluate(model, &data.val, s, data.val_seed)?;
        p += r.mean_psnr;
        n += r.mean_noisy_psnr;
    }
    let k = cfg.sigmas.len() as f64;
    Ok((p / k, n / k))
}

fn read_loss_log(path: &Path, upto: usize) -> Result<String> {
    let text = fs::read_to_string(path)?;
    let mut out = format!("{LOSS_HEADER}\n");
    for line in text.lines().skip(1) {
        let iter: usize = line.split(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| {
            Error::Checkpoint(format!("malformed loss log line `{line}`"))
        })?;
        if iter <= upto {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// One optimization step on a batch. Returns the pre-update loss.
pub fn train_step(model: &mut ModelGraph, noisy: Tensor, clean: Tensor, adam: &mut AdamState, lr: f32, cfg: &TrainConfig, iter: usize) -> Result<f32> {
    let diverged = |loss: f32| Error::Divergence { iter, loss };
    let mut tape = Tape::new();
    let x = tape.constant(noisy);
    let forward = model.forward_tape(&mut tape, x, &ForwardOptions { trainable: true, swap: None });
    let y = match forward {
        Ok(t) => t.output,
        Err(Error::NonFinite { .. }) => return Err(diverged(f32::NAN)),
        Err(e) => return Err(e),
    };
    let target = tape.constant(clean);
    let loss = match tape.mse_loss(y, target) {
        Ok(l) => l,
        Err(Error::NonFinite { .. }) => return Err(diverged(f32::NAN)),
        Err(e) => return Err(e),
    };
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(diverged(value));
    }
    let mut grads = tape.backward(loss)?.into_params();
    check_finite(&grads)?;
    if cfg.clip > 0.0 {
        clip_global_norm(&mut grads, cfg.clip);
    }
    adam_step(model.params_mut(), &grads, adam, lr, &AdamConfig { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps })?;
    Ok(value)
}

/// Trains `model` in place, writing checkpoints and logs under `out`.
pub fn train(model: &mut ModelGraph, data: &Dataset, cfg: &TrainConfig, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training needs at least one training and one validation image".into()));
    }
    if cfg.patch % model.divisor() != 0 {
        return Err(Error::Config(format!("patch {} is not a multiple of the model divisor {}", cfg.patch, model.divisor())));
    }
    if let Some(small) = data.train.iter().find(|i| i.h().min(i.w()) < cfg.patch) {
        return Err(Error::Config(format!("{}x{} training image is smaller than patch {}", small.h(), small.w(), cfg.patch)));
    }
    fs::create_dir_all(out)?;
    let fp = fingerprint(model, cfg);
    let loss_path = out.join(LOSS_FILE);

    let (mut state, mut log) = if opts.resume {
        let st = TrainState::from_checkpoint(&Checkpoint::load(out.join(STATE_FILE))?, model)?;
        if st.fingerprint != fp {
            return Err(Error::Config("resume state was written with a different model or training configuration".into()));
        }
        let log = read_loss_log(&loss_path, st.step)?;
        (st, log)
    } else {
        model.save(out.join("init.mckp"))?;
        let st = TrainState { step: 0, rng: Rng::keyed(cfg.seed, "train"), adam: AdamState::default(), best_psnr: None, fingerprint: fp };
        (st, format!("{LOSS_HEADER}\n"))
    };
    let (_, noisy_psnr) = validate(&Identity, data, cfg)?;
    let mut summary = TrainSummary { step: state.step, last_loss: None, last_psnr: None, best_psnr: state.best_psnr, noisy_psnr };
    if cfg.iterations == 0 {
        return Ok(summary);
    }

    let end = opts.stop_at.map_or(cfg.iterations, |s| s.min(cfg.iterations));
    let save_state = |state: &TrainState, model: &ModelGraph, log: &str| -> Result<()> {
        state.to_checkpoint(model)?.save(out.join(STATE_FILE))?;
        model.save(out.join("last.mckp"))?;
        fs::write(&loss_path, log)?;
        Ok(())
    };
    while state.step < end {
        let iter = state.step + 1;
        let lr = cosine_lr(iter - 1, cfg.iterations, cfg.lr)?;
        let (noisy, clean) = sample_batch(&data.train, cfg, &mut state.rng)?;
        let loss = match train_step(model, noisy, clean, &mut state.adam, lr, cfg, iter) {
            Ok(l) => l,
            Err(e) => {
                fs::write(&loss_path, &log)?;
                return Err(e);
            }
        };
        state.step = iter;
        summary.step = iter;
        summary.last_loss = Some(loss);

        let eval_now = iter == cfg.iterations || (cfg.eval_every > 0 && iter % cfg.eval_every == 0);
        let mut psnr_field = String::new();
        if eval_now {
            let (p, _) = validate(model, data, cfg)?;
            psnr_field = format!("{p:.6}");
            summary.last_psnr = Some(p);
            if state.best_psnr.is_none_or(|b| p > b) {
                state.best_psnr = Some(p);
                model.save(out.join("best.mckp"))?;
            }
            summary.best_psnr = state.best_psnr;
            if opts.verbose {
                eprintln!("iter {iter:>6}  loss {loss:.6}  lr {lr:.3e}  val psnr {p:.3} dB");
            }
        }
        let _ = writeln!(log, "{iter},{loss},{lr},{psnr_field}");
        if iter == end || (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            save_state(&state, model, &log)?;
        }
    }
    Ok(summary)
}
