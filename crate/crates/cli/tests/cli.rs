use std::path::Path;
use std::process::{Command, Output};

use styleaug::adain::{StyleArch, StyleTrainConfig};
use styleaug::data::SyntheticSpec;
use styleaug::harness::{ClassifierArch, DatasetSource, ExperimentConfig};

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSource::Synthetic {
            spec: SyntheticSpec {
                num_classes: 3,
                images_per_class: 6,
                resolution: 16,
                ..Default::default()
            },
            seed: 2,
        },
        style: StyleTrainConfig {
            arch: StyleArch {
                channels: [4, 4, 4],
                downsample: 1,
                resolution: 16,
            },
            epochs: 2,
            pretrain_iterations: 5,
            ..Default::default()
        },
        n_runs: 2,
        ..Default::default()
    };
    cfg.classifier.arch = ClassifierArch { channels: [4, 4, 4, 4] };
    cfg.classifier.iterations = 20;
    cfg.classifier.val_every = 10;
    cfg.classifier.per_domain = 4;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    path
}

fn styleaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleaug"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let out = ok(styleaug(&["gen-data", "--config", cfg, "--out", &d("data")]));
    assert!(out.contains("total = 72"), "{out}");
    assert!(dir.path().join("data/sketch").is_dir());

    let out = ok(styleaug(&["train-style", "--config", cfg, "--target", "sketch", "--out", &d("style.ckpt")]));
    assert!(out.contains("epoch   2"), "{out}");

    let out = ok(styleaug(&[
        "train-cls",
        "--config",
        cfg,
        "--target",
        "sketch",
        "--augmentation",
        "stylized",
        "--alpha",
        "0.5",
        "--style-checkpoint",
        &d("style.ckpt"),
        "--results",
        &d("r.csv"),
        "--save-dir",
        &d("models"),
    ]));
    assert_eq!(out.matches("[augmentation_stats]").count(), 2, "{out}");
    assert!(out.contains("Stylized"));

    let out = ok(styleaug(&[
        "eval",
        "--config",
        cfg,
        "--target",
        "sketch",
        "--checkpoint",
        &d("models/sketch-seed0.ckpt"),
    ]));
    assert!(out.contains("of 18 images"), "{out}");

    ok(styleaug(&[
        "train-cls", "--config", cfg, "--target", "art", "--method", "rotation", "--seed", "5", "--results",
        &d("r2.csv"),
    ]));
    let out = ok(styleaug(&["report", &d("r.csv"), &d("r2.full.csv")]));
    assert!(out.contains("sketch") && out.contains("rotation"), "{out}");

    let out = ok(styleaug(&["sweep", "--config", cfg, "--targets", "art,photo", "--alphas", "0.5,1", "--runs", "1"]));
    assert!(out.contains("photo") && out.contains("alpha,p,mean,std\n0.5,0.75,"), "{out}");
}

#[test]
fn bad_input_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = styleaug(&["train-cls", "--config", cfg, "--target", "sketch", "--p", "1.5"]);
    assert!(!o.status.success());
    let o = styleaug(&["train-cls", "--config", cfg, "--target", "moon"]);
    assert!(!o.status.success());
    let o = styleaug(&["train-cls", "--config", cfg, "--target", "sketch", "--method", "cutout"]);
    assert!(!o.status.success());
    let o = styleaug(&["eval", "--config", cfg, "--target", "sketch", "--checkpoint", "missing.ckpt"]);
    assert!(!o.status.success());
    let o = styleaug(&["config", "--config", cfg, "--alpha", "0.25"]);
    assert!(stdout(&o).contains("alpha = 0.25"));
    let o = styleaug(&["train-cls", "--config", "no/such/file.toml", "--target", "sketch"]);
    assert!(!o.status.success());
}
