use std::fs;
use std::time::Instant;

use malle_core::models::{build_dncnn, MalleInsert, ModelConfig, ModelGraph};
use malle_core::train::{evaluate, train, DataConfig, Dataset, TrainConfig, TrainOptions};

fn small_data() -> Dataset {
    Dataset::load(&DataConfig { train_images: 8, val_images: 2, size: 64, ..DataConfig::default() }).unwrap()
}

fn tiny_mallenet() -> ModelGraph {
    ModelConfig::default().build().unwrap()
}

fn median(v: &[f32]) -> f32 {
    let mut v = v.to_vec();
    v.sort_by(f32::total_cmp);
    v[v.len() / 2]
}

fn losses(csv: &str) -> Vec<f32> {
    csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn zero_iterations_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny_mallenet();
    let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
    train(&mut m, &small_data(), &cfg, dir.path(), &TrainOptions::default()).unwrap();
    let files: Vec<String> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(files, ["init.mckp"]);
}

#[test]
fn loss_trends_down() {
    let data = small_data();
    for seed in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_mallenet();
        m.init_weights(seed).unwrap();
        let cfg = TrainConfig { iterations: 200, seed, eval_every: 0, ..TrainConfig::default() };
        let t = Instant::now();
        train(&mut m, &data, &cfg, dir.path(), &TrainOptions::default()).unwrap();
        eprintln!("200 iterations in {:?}", t.elapsed());
        let l = losses(&fs::read_to_string(dir.path().join("loss.csv")).unwrap());
        assert_eq!(l.len(), 200);
        let (a, b) = (median(&l[..100]), median(&l[100..]));
        assert!(b < a, "seed {seed}: {a} -> {b}");
    }
}

fn quick_cfg(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, eval_every: 10, checkpoint_every: 7, ..TrainConfig::default() }
}

fn run(dir: &std::path::Path, cfg: &TrainConfig, opts: &TrainOptions) -> ModelGraph {
    let mut m = tiny_mallenet();
    m.init_weights(cfg.seed).unwrap();
    if opts.resume {
        // Parameters come from the saved state, not from this init.
        m.init_weights(999).unwrap();
    }
    train(&mut m, &small_data(), cfg, dir, opts).unwrap();
    m
}

#[test]
fn same_seed_gives_identical_logs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = quick_cfg(20);
    run(a.path(), &cfg, &TrainOptions::default());
    run(b.path(), &cfg, &TrainOptions::default());
    for f in ["loss.csv", "last.mckp", "best.mckp", "state.mstate"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(a.path().join("loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iter,loss,lr,psnr");
    assert!(lines[1].ends_with(','));
    assert!(!lines[10].ends_with(','));
    assert_eq!(lines.len(), 21);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = quick_cfg(20);
    let straight = run(a.path(), &cfg, &TrainOptions::default());
    run(b.path(), &cfg, &TrainOptions { stop_at: Some(9), ..TrainOptions::default() });
    let log = fs::read_to_string(b.path().join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 10);
    let resumed = run(b.path(), &cfg, &TrainOptions { resume: true, ..TrainOptions::default() });
    assert_eq!(straight.params(), resumed.params());
    for f in ["loss.csv", "last.mckp", "best.mckp", "state.mstate"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_rejects_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_cfg(4);
    run(dir.path(), &cfg, &TrainOptions::default());
    let mut m = tiny_mallenet();
    let other = TrainConfig { lr: 0.5, ..cfg };
    let opts = TrainOptions { resume: true, ..TrainOptions::default() };
    assert!(train(&mut m, &small_data(), &other, dir.path(), &opts).is_err());
}

#[test]
fn identity_malleconv_matches_backbone_psnr_at_step_zero() {
    let with = build_dncnn(3, 16, MalleInsert::Mid(1)).unwrap();
    let mut layers = with.layers().to_vec();
    layers.remove(2);
    let mut without = ModelGraph::new(with.config().clone(), layers, 3, true, vec![0]).unwrap();
    for (src, dst) in [("l0.w", "l0.w"), ("l0.b", "l0.b"), ("l4.w", "l3.w"), ("l4.b", "l3.b")] {
        without.params_mut().set(dst, with.params().get(src).unwrap().clone()).unwrap();
    }
    let val = small_data().val;
    let a = evaluate(&with, &val, 25.0, 3).unwrap().mean_psnr;
    let b = evaluate(&without, &val, 25.0, 3).unwrap().mean_psnr;
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn blind_mode_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let mut m = tiny_mallenet();
    let blind = TrainConfig { iterations: 3, sigmas: vec![15.0, 25.0, 50.0], blind: true, ..TrainConfig::default() };
    train(&mut m, &data, &blind, dir.path(), &TrainOptions::default()).unwrap();
    let per_sigma = TrainConfig { blind: false, ..blind.clone() };
    assert!(train(&mut m, &data, &per_sigma, dir.path(), &TrainOptions::default()).is_err());
    let bad_patch = TrainConfig { patch: 48, ..TrainConfig::default() };
    assert!(train(&mut m, &data, &bad_patch, dir.path(), &TrainOptions::default()).is_err());
}

#[test]
fn huge_learning_rate_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = build_dncnn(3, 16, MalleInsert::None).unwrap();
    let cfg = TrainConfig { iterations: 50, lr: 1e30, clip: 0.0, eval_every: 0, ..TrainConfig::default() };
    let err = train(&mut m, &small_data(), &cfg, dir.path(), &TrainOptions::default()).unwrap_err();
    assert!(
        matches!(err, malle_core::Error::Divergence { .. } | malle_core::Error::NonFiniteGradient { .. }),
        "{err}"
    );
}
