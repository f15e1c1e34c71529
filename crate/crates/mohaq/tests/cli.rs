//! Exit-code and file-handling behavior of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn mohaq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mohaq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_CONFIG: &str = r#"
[task]
input_dim = 4
seq_len = 6
classes = 2
train_size = 16
val_size = 8
test_size = 8

[model]
hidden = 4
directions = 1
sru_layers = 1

[train]
epochs = 2
max_val_error = 1.0

[search]
calibration_count = 4
"#;

#[test]
fn no_arguments_is_a_usage_error() {
    let out = mohaq(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("Usage"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(mohaq(&["--help"]).status.code(), Some(0));
    assert_eq!(mohaq(&["--version"]).status.code(), Some(0));
    assert_eq!(mohaq(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(mohaq(&["tune"]).status.code(), Some(1));
}

#[test]
fn missing_config_file_exit_names_the_path() {
    let out = mohaq(&["train", "--config", "/no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("/no/such/config.toml"));
}

#[test]
fn invalid_config_field_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 0\n").unwrap();
    let out = mohaq(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("train.epochs"));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let out = mohaq(&[
        "search",
        "--config",
        "bitfusion",
        "--checkpoint",
        "/no/such/baseline.net",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("/no/such/baseline.net"));
}

#[test]
fn bad_mode_and_bad_jobs_are_usage_errors() {
    let out = mohaq(&[
        "search",
        "--checkpoint",
        "irrelevant.net",
        "--mode",
        "hybrid",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("hybrid"));
    let out = mohaq(&["search", "--checkpoint", "irrelevant.net", "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_is_deterministic_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let res = mohaq(&["train", "--config", cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", stderr_of(&res));
    }
    let read = |dir: &Path, name: &str| std::fs::read(dir.join(name)).unwrap();
    assert_eq!(read(&out1, "baseline.net"), read(&out2, "baseline.net"));
    assert_eq!(
        read(&out1, "train_summary.txt"),
        read(&out2, "train_summary.txt")
    );

    let ckpt = out1.join("baseline.net");
    let net = mohaq::checkpoint::load(&ckpt).unwrap();
    let resaved = dir.path().join("resaved.net");
    mohaq::checkpoint::save(&net, &resaved).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&resaved).unwrap());

    // a seed override must change the parameters
    let out3 = dir.path().join("c");
    let res = mohaq(&[
        "train",
        "--config",
        cfg,
        "--out",
        out3.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_ne!(read(&out1, "baseline.net"), read(&out3, "baseline.net"));

    // verify without a pareto.csv in the output directory is a runtime error
    let res = mohaq(&[
        "verify",
        "--config",
        cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr_of(&res).contains("pareto.csv"));

    // checkpoint incompatible with the config dimensions is rejected up front
    let res = mohaq(&[
        "search",
        "--config",
        "bitfusion",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
}
