//! End-to-end runs of the `vrmatte` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vrmatte::dataset::SourceConfig;
use vrmatte::harness::{RunConfig, DEVICE_ENV};

fn vrmatte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrmatte")).args(args).env_remove(DEVICE_ENV).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vrmatte(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(root: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::from_toml(&ok(&["config", "--preset", "toy"])).unwrap();
    cfg.synth.frames = 4;
    cfg.synth.height = 16;
    cfg.synth.width = 16;
    cfg.synth.train_samples = 2;
    cfg.synth.val_samples = 1;
    cfg.synth.sources = SourceConfig::Procedural { backgrounds: 4, foregrounds: 6, foreground_size: 16, seed: 2 };
    cfg.codec_train.steps = 4;
    cfg.codec_train.eval_every = 2;
    cfg.denoiser.d_model = 16;
    cfg.denoiser.depth = 1;
    cfg.denoiser.heads = 2;
    cfg.denoiser.text.slots = 4;
    cfg.denoiser.text.dim = 8;
    cfg.schedule.t_diff = 50;
    cfg.schedule.sample_steps = 3;
    cfg.train.steps = 2;
    cfg.train.batch_size = 1;
    cfg.train.warmup = 0;
    cfg.paths.data_root = root.join("data");
    cfg.paths.run_dir = root.join("run");
    let path = root.join("tiny.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn presets_print_as_loadable_toml() {
    for preset in ["default", "toy", "overfit"] {
        let text = ok(&["config", "--preset", preset]);
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::preset(preset).unwrap());
    }
    assert!(!vrmatte(&["config", "--preset", "huge"]).status.success());
}

#[test]
fn unsupported_device_fails_fast() {
    let out = Command::new(env!("CARGO_BIN_EXE_vrmatte")).args(["config"]).env(DEVICE_ENV, "cuda:0").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(DEVICE_ENV));
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg]);
    assert!(root.join("data/manifest.jsonl").is_file());

    let stdout = ok(&["train", "--config", cfg, "--stage", "codec", "--log-every", "1"]);
    assert!(stdout.contains("trained steps 0..4"), "{stdout}");
    let ckpt = root.join("run/checkpoints/diffusion.ckpt");
    ok(&["train", "--config", cfg, "--stage", "diffusion"]);
    assert!(ckpt.is_file());
    let ckpt = ckpt.to_str().unwrap();

    let video = root.join("data/train_00000/composite");
    let out = root.join("sample");
    ok(&[
        "sample",
        "--ckpt",
        ckpt,
        "--video",
        video.to_str().unwrap(),
        "--caption",
        "a shape",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_dir(out.join("alpha")).unwrap().count(), 4);
    let empty = vrmatte(&["sample", "--ckpt", ckpt, "--video", video.to_str().unwrap(), "--caption", "", "--out", out.to_str().unwrap()]);
    assert!(!empty.status.success());

    let pred = root.join("pred");
    let data = root.join("data");
    ok(&["predict", "--ckpt", ckpt, "--data", data.to_str().unwrap(), "--split", "val", "--out", pred.to_str().unwrap()]);
    let report = ok(&["eval", "--pred", pred.to_str().unwrap(), "--gt", data.to_str().unwrap(), "--split", "val"]);
    assert!(report.contains("VIMQ"), "{report}");
    assert!(pred.join("report.json").is_file());

    let mismatch = vrmatte(&["eval", "--pred", pred.to_str().unwrap(), "--gt", data.to_str().unwrap()]);
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("train_00000"));
}
