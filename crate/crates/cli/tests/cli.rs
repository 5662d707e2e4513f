//! End-to-end runs of the `malle` binary.

use std::path::Path;
use std::process::{Command, Output};

use malle_core::data::{save_image, synth_corpus};
use malle_core::models::{LayerSpec, ModelConfig};
use malle_core::Tensor;

const SMALL: [&str; 9] = [
    "data.size=32",
    "data.train_images=4",
    "data.val_images=1",
    "train.patch=16",
    "train.batch=2",
    "train.eval_every=5",
    "model.arch=dncnn",
    "model.malle=mid",
    "model.pool=2",
];

fn malle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malle")).args(args).env_remove("MALLE_THREADS").output().expect("spawn malle")
}

fn with_sets<'a>(mut args: Vec<&'a str>, sets: &[&'a str]) -> Vec<&'a str> {
    for s in sets {
        args.extend(["--set", s]);
    }
    args
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let dir = out.to_str().unwrap();
    let args = with_sets(vec!["train", "--quiet", "--out", dir], &SMALL);
    let mut args = with_sets(args, &["train.iterations=12", "train.checkpoint_every=4"]);
    args.extend(extra);
    malle(&args)
}

fn test_image(path: &Path) {
    let img = synth_corpus(1, 32, 5).unwrap().remove(0);
    save_image(&img, path).unwrap();
}

#[test]
fn help_prints_schema() {
    let o = malle(&["--help"]);
    assert_eq!(code(&o), 0);
    for key in ["model.arch=", "train.iterations=", "data.size=", "bench.pools="] {
        assert!(stdout(&o).contains(key), "{key}");
    }
    assert_eq!(code(&malle(&["bench", "--help"])), 0);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let out = out.to_str().unwrap();
    assert_eq!(code(&malle(&["train", "--out", out, "--frobnicate"])), 2);
    assert_eq!(code(&malle(&["train", "--out", out, "--set", "train.warp=9"])), 2);
    assert_eq!(code(&malle(&["train", "--out", out, "--set", "iterations=9"])), 2);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.arch=dncnn\nmodel.colour=red\n").unwrap();
    assert_eq!(code(&malle(&["train", "--out", out, "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&malle(&["verify", "--suite", "everything"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_malle")).args(["verify", "--cases", "1"]).env("MALLE_THREADS", "many").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_iterations_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = malle(&["train", "--out", out.to_str().unwrap(), "--set", "train.iterations=0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["config.txt", "init.mckp"]);
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("train.iterations=0\n"));
}

#[test]
fn identity_model_reaches_psnr_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ModelConfig { arch: malle_core::models::Arch::DnCnn, ..ModelConfig::default() }.build().unwrap();
    model.init_weights(0).unwrap();
    let head = model.layers().iter().rposition(|l| matches!(l, LayerSpec::Conv(_))).unwrap();
    for name in [format!("l{head}.w"), format!("l{head}.b")] {
        let shape = model.params().get(&name).unwrap().shape();
        model.params_mut().set(&name, Tensor::zeros(shape)).unwrap();
    }
    let ckpt = dir.path().join("identity.mckp");
    model.save(&ckpt).unwrap();
    let clean = dir.path().join("clean.ppm");
    test_image(&clean);
    let out = dir.path().join("out/denoised.ppm");
    let o = malle(&["denoise", "--model", ckpt.to_str().unwrap(), "--in", clean.to_str().unwrap(), "--out", out.to_str().unwrap(), "--sigma", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\npsnr 99.0000 dB"), "{}", stdout(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&clean).unwrap());

    let noisy = malle(&["denoise", "--model", ckpt.to_str().unwrap(), "--in", clean.to_str().unwrap(), "--out", out.to_str().unwrap(), "--sigma", "25"]);
    assert_eq!(code(&noisy), 0);
    assert!(!stdout(&noisy).contains("psnr 99.0000"));

    let noisy_in = out.to_str().unwrap();
    let twice = dir.path().join("out/twice.ppm");
    let o = malle(&["denoise", "--model", ckpt.to_str().unwrap(), "--in", noisy_in, "--out", twice.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(!stdout(&o).contains("psnr"));
    let o = malle(&["denoise", "--model", ckpt.to_str().unwrap(), "--in", noisy_in, "--clean", clean.to_str().unwrap(), "--out", twice.to_str().unwrap()]);
    assert!(stdout(&o).contains("\nnoisy psnr ") || stdout(&o).starts_with("noisy psnr "));
}

#[test]
fn verify_small_run_passes() {
    let o = malle(&["verify", "--suite", "all", "--cases", "20", "--seeds", "1", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&train_small(&a, &[])), 0);
    assert_eq!(code(&train_small(&b, &[])), 0);
    for f in ["loss.csv", "eval.csv", "config.txt", "last.mckp"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&train_small(&c, &["--stop-at", "6"])), 0);
    assert_eq!(code(&train_small(&c, &["--resume"])), 0);
    for f in ["loss.csv", "last.mckp"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(c.join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("d");
    assert_eq!(code(&train_small(&other, &["--seed", "9"])), 0);
    assert_ne!(std::fs::read(a.join("loss.csv")).unwrap(), std::fs::read(other.join("loss.csv")).unwrap());
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(&dir.path().join("r"), &["--set", "train.lr=1e30", "--set", "train.clip=0"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

fn bench_csv(dir: &Path, latency: &str) -> String {
    let out = dir.to_str().unwrap();
    let args = with_sets(vec!["bench", "--out", out], &["bench.size=32", "bench.channels=4", "bench.reps=3", "bench.warmup=0", latency]);
    let o = malle(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("# FLOPs count one multiply-accumulate as 2 FLOPs"));
    std::fs::read_to_string(dir.join("bench.csv")).unwrap()
}

fn without_timing(csv: &str) -> Vec<Vec<String>> {
    csv.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 7 && *i != 8).map(|(_, f)| f.to_string()).collect()).collect()
}

#[test]
fn bench_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = bench_csv(&dir.path().join("a"), "bench.latency=true");
    let b = bench_csv(&dir.path().join("b"), "bench.latency=true");
    assert_eq!(without_timing(&a), without_timing(&b));
    assert!(a.starts_with("name,h,w,c,k,flops,peak_aux_elems,median_ms,p90_ms,psnr,ssim\n"));
    let c = bench_csv(&dir.path().join("c"), "bench.latency=false");
    let d = bench_csv(&dir.path().join("d"), "bench.latency=false");
    assert_eq!(c, d);
    let names: Vec<&str> = a.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for n in ["dncnn", "dncnn_malle_pool0", "dncnn_malle_pool8", "slice_fused", "slice_naive", "hypernetwork"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn inspect_checks_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.ppm");
    test_image(&img);
    let ckpt = dir.path().join("m.mckp");
    let mut m = ModelConfig { arch: malle_core::models::Arch::DnCnn, malle_mid: true, k: 3, pool: 2, ..ModelConfig::default() }.build().unwrap();
    m.init_weights(1).unwrap();
    m.save(&ckpt).unwrap();
    let out = dir.path().join("pair.ppm");
    let run = |cell: &str| malle(&["inspect", "--model", ckpt.to_str().unwrap(), "--in", img.to_str().unwrap(), "--cell", cell, "--out", out.to_str().unwrap()]);

    let o = run("1,2");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bit-exactly: true"));
    let pair = malle_core::data::load_image(&out).unwrap();
    assert_eq!((pair.h(), pair.w(), pair.c()), (32, 64, 3));

    assert_eq!(code(&run("8,0")), 2);
    assert_eq!(code(&run("1")), 2);

    let plain = dir.path().join("plain.mckp");
    let mut p = ModelConfig { arch: malle_core::models::Arch::DnCnn, ..ModelConfig::default() }.build().unwrap();
    p.init_weights(1).unwrap();
    p.save(&plain).unwrap();
    let o = malle(&["inspect", "--model", plain.to_str().unwrap(), "--in", img.to_str().unwrap(), "--cell", "0,0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
