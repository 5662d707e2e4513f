//! Subcommand implementations. Each writes its artifacts and prints a short
//! report to stdout.

use std::fs;
use std::path::Path;

use malle_core::data::{add_awgn, load_image, save_image, Image, NoiseConfig};
use malle_core::malleconv::{slice_apply_fused, slice_apply_naive, KernelGrid};
use malle_core::metrics::{bench_latency, count_flops, measure_peak_aux, psnr, BenchReport, BenchRow, CostModel};
use malle_core::metrics::flops::fused_slice_flops;
use malle_core::models::{Arch, ForwardOptions, KernelSwap, ModelConfig, ModelGraph};
use malle_core::ops::depthwise_conv2d;
use malle_core::train::{evaluate, Dataset, TrainOptions};
use malle_core::verify::{grad_suite, oracle_suite, SuiteReport};
use malle_core::{max_abs_diff, Rng, Shape, Tensor};

use crate::cli::{BenchArgs, DenoiseArgs, InspectArgs, Suite, TrainArgs, VerifyArgs};
use crate::error::CliError;
use crate::run_config::{BenchConfig, RunConfig};

fn write_config(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.config.as_deref(), &a.config.overrides)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let mut model = cfg.model.build()?;
    model.init_weights(cfg.train.seed)?;
    let data = Dataset::load(&cfg.data)?;
    write_config(&a.out, &cfg)?;

    let opts = TrainOptions { resume: a.resume, stop_at: a.stop_at, verbose: !a.quiet };
    let summary = malle_core::train::train(&mut model, &data, &cfg.train, &a.out, &opts)?;
    println!("params {}  step {}/{}", model.param_count(), summary.step, cfg.train.iterations);
    if summary.step == 0 {
        println!("wrote {}", a.out.join("init.mckp").display());
        return Ok(());
    }
    let sigma = cfg.train.sigmas[0];
    let report = evaluate(&model, &data.val, sigma, data.val_seed)?;
    fs::write(a.out.join("eval.csv"), report.to_csv())?;
    println!(
        "sigma {sigma}  val psnr {:.3} dB (noisy {:.3} dB)  ssim {:.4}",
        report.mean_psnr, report.mean_noisy_psnr, report.mean_ssim
    );
    Ok(())
}

pub fn denoise(a: &DenoiseArgs) -> Result<(), CliError> {
    let model = ModelGraph::load(&a.model)?;
    let input = load_image(&a.input)?;
    if input.c() != model.in_channels() {
        return Err(CliError::Config(format!(
            "{} has {} channels but the model expects {}",
            a.input.display(),
            input.c(),
            model.in_channels()
        )));
    }
    let (noisy, reference) = match (a.sigma, &a.clean) {
        (Some(sigma), _) => (add_awgn(&input, &NoiseConfig { sigma, seed: a.seed })?, Some(input)),
        (None, Some(path)) => (input, Some(load_image(path)?)),
        (None, None) => (input, None),
    };
    let restored = Image::from_tensor(&model.forward(&noisy.to_tensor())?)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_image(&restored, &a.out)?;
    if let Some(clean) = reference {
        let clean = clean.to_tensor();
        println!("noisy psnr {:.4} dB", psnr(&noisy.to_tensor(), &clean, 1.0)?);
        println!("psnr {:.4} dB", psnr(&restored.to_tensor(), &clean, 1.0)?);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let mut report = SuiteReport::default();
    if matches!(a.suite, Suite::Oracle | Suite::All) {
        report.extend(oracle_suite(a.cases, a.seed)?);
    }
    if matches!(a.suite, Suite::Grad | Suite::All) {
        report.extend(grad_suite(a.seeds, a.seed)?);
    }
    for c in report.cases.iter().filter(|c| !a.quiet || !c.passed) {
        println!("{c}");
    }
    println!(
        "{} cases, {} failed, max error {:.3e}",
        report.cases.len(),
        report.failures(),
        report.max_error()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{} verification cases failed", report.failures())))
    }
}

fn random_grid(h: usize, w: usize, c: usize, k: usize, rng: &mut Rng) -> Result<(Tensor, KernelGrid), CliError> {
    let (gh, gw) = malle_core::malleconv::PredictorConfig::new(k, c).grid_dims(h, w);
    let weights = Tensor::randn(Shape::new(1, gh, gw, k * k * c), 0.3, rng);
    let bias = Tensor::randn(Shape::new(1, gh, gw, c), 0.1, rng);
    let g = KernelGrid::from_parts(weights.data(), bias.data(), (1, gh, gw), c, k)?;
    Ok((Tensor::randn(Shape::new(1, h, w, c), 1.0, rng), g))
}

/// Builds every report row; latency columns are filled only when `b.latency` is set.
pub fn bench_report(b: &BenchConfig) -> Result<BenchReport, CliError> {
    let (h, w, c) = (b.size, b.size, b.channels);
    let mut report = BenchReport::default();
    let timed = |row: &mut BenchRow, f: &mut dyn FnMut()| -> Result<(), CliError> {
        if b.latency {
            row.latency = Some(bench_latency(b.reps, b.warmup, f)?);
        }
        Ok(())
    };
    let mut rng = Rng::keyed(0, "bench");

    let plain = ModelConfig { arch: Arch::DnCnn, depth: b.depth, channels: c, malle_mid: false, ..ModelConfig::default() };
    let mut models = vec![("dncnn".to_string(), 0, plain.clone())];
    for &k in &b.ks {
        for &pool in &b.pools {
            let cfg = ModelConfig { malle_mid: true, k, pool, ..plain.clone() };
            models.push((format!("dncnn_malle_pool{pool}"), k, cfg));
        }
    }
    for (name, k, cfg) in models {
        let mut m = cfg.build()?;
        m.init_weights(0)?;
        let mut row = BenchRow::new(name, h, w, c, k, count_flops(&m, h, w)?);
        let x = Tensor::rand_uniform(Shape::new(1, h, w, m.in_channels()), 0.0, 1.0, &mut rng);
        timed(&mut row, &mut || {
            let _ = m.forward(&x);
        })?;
        report.push(row);
    }

    for &k in &b.ks {
        let cost = CostModel::new(h, w, c, k);
        let (x, g) = random_grid(h, w, c, k, &mut rng)?;
        let apply = fused_slice_flops(Shape::new(1, h, w, c), k);

        let mut fused = BenchRow::new("slice_fused", h, w, c, k, apply);
        fused.peak_aux_elems = Some(measure_peak_aux(|| slice_apply_fused(&x, &g))?.1 as u64);
        timed(&mut fused, &mut || {
            let _ = slice_apply_fused(&x, &g);
        })?;
        report.push(fused);

        let mut naive = BenchRow::new("slice_naive", h, w, c, k, apply);
        naive.peak_aux_elems = Some(measure_peak_aux(|| slice_apply_naive(&x, &g).map(|s| s.output))?.1 as u64);
        timed(&mut naive, &mut || {
            let _ = slice_apply_naive(&x, &g);
        })?;
        report.push(naive);

        let mut layer = BenchRow::new("malleconv_layer", h, w, c, k, cost.fused_flops());
        layer.peak_aux_elems = Some(cost.fused_kernel_map_elems());
        report.push(layer);

        let mut hyper = BenchRow::new("hypernetwork", h, w, c, k, cost.hypernetwork_flops());
        hyper.peak_aux_elems = Some(cost.hypernetwork_aux_elems());
        report.push(hyper);
    }
    Ok(report)
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.config.as_deref(), &a.config.overrides)?;
    let b = &cfg.bench;
    if b.size == 0 || b.channels == 0 || b.ks.is_empty() {
        return Err(CliError::Config("bench needs a positive size and channel count and at least one k".into()));
    }
    write_config(&a.out, &cfg)?;
    let report = bench_report(b)?;
    fs::write(a.out.join("bench.csv"), report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

/// Default and swapped outputs of one inspection.
pub struct Inspection {
    pub layer: usize,
    pub default_output: Tensor,
    pub swapped_output: Tensor,
    /// Swapped layer output equals `depthwise_conv2d` with the cell's kernel, bit for bit.
    pub bit_exact: bool,
    pub max_abs_diff: f32,
}

pub fn inspect_model(model: &ModelGraph, x: &Tensor, layer: Option<usize>, (row, col): (usize, usize)) -> Result<Inspection, CliError> {
    let malle = model.malle_layers();
    let layer = match layer {
        Some(l) if malle.contains(&l) => l,
        Some(l) => return Err(CliError::Config(format!("layer {l} is not a MalleConv layer (MalleConv layers: {malle:?})"))),
        None => *malle.first().ok_or_else(|| CliError::Config("model has no MalleConv layer".into()))?,
    };
    let (default_output, caps) = model.forward_with(x, &ForwardOptions::default())?;
    let grid = &caps.iter().find(|c| c.layer == layer).expect("captured layer").grid;
    if row >= grid.grid_h() || col >= grid.grid_w() {
        return Err(CliError::Config(format!("cell {row},{col} is outside the {}x{} grid", grid.grid_h(), grid.grid_w())));
    }
    let opts = ForwardOptions { trainable: false, swap: Some(KernelSwap { layer, row, col }) };
    let (swapped_output, caps) = model.forward_with(x, &opts)?;
    let cap = caps.iter().find(|c| c.layer == layer).expect("captured layer");
    let (kw, kb) = cap.grid.cell_kernel(0, row, col)?;
    let reference = depthwise_conv2d(&cap.input, cap.grid.k(), &kw, Some(&kb))?;
    let bit_exact = reference.data().iter().zip(cap.output.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let max_abs_diff = max_abs_diff(&default_output, &swapped_output)?;
    Ok(Inspection { layer, default_output, swapped_output, bit_exact, max_abs_diff })
}

fn side_by_side(a: &Image, b: &Image) -> Result<Image, CliError> {
    let (h, w, c) = (a.h(), a.w(), a.c());
    let mut data = Vec::with_capacity(2 * a.data().len());
    for y in 0..h {
        for img in [a, b] {
            data.extend_from_slice(&img.data()[y * w * c..(y + 1) * w * c]);
        }
    }
    Ok(Image::new(h, 2 * w, c, data)?)
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let model = ModelGraph::load(&a.model)?;
    let img = load_image(&a.input)?;
    if img.c() != model.in_channels() {
        return Err(CliError::Config(format!("{} has {} channels but the model expects {}", a.input.display(), img.c(), model.in_channels())));
    }
    let r = inspect_model(&model, &img.to_tensor(), a.layer, a.cell)?;
    let pair = side_by_side(&Image::from_tensor(&r.default_output)?, &Image::from_tensor(&r.swapped_output)?)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_image(&pair, &a.out)?;
    println!("layer {}  cell {},{}", r.layer, a.cell.0, a.cell.1);
    println!("swapped layer output matches depthwise_conv2d bit-exactly: {}", r.bit_exact);
    println!("max abs diff default vs swapped output: {:.6e}", r.max_abs_diff);
    println!("wrote {} (left: default, right: swapped)", a.out.display());
    if r.bit_exact {
        Ok(())
    } else {
        Err(CliError::Numeric("swapped output does not match depthwise_conv2d".into()))
    }
}
