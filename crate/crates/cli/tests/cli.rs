//! End-to-end tests that drive the compiled binary the way a user would:
//! spawn it with a config file, then inspect exit codes and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_unlearn-surgery");

/// Small but complete experiment: 240 synthetic 16-pixel images in two
/// classes, a 16-12-4 model, 8 training epochs. Runs in milliseconds.
fn base_config(out_dir: &Path) -> Value {
    json!({
        "dataset": {
            "kind": "synth", "n": 240, "classes": [1, 3], "class_weights": null,
            "image_dim": 16, "noise_std": 0.05, "seed": 5
        },
        "forget_class": 1,
        "arch": {
            "input_dim": 16, "hidden_dims": [12], "latent_dim": 4,
            "activation": "tanh", "likelihood": "bernoulli"
        },
        "train": {
            "lr": 0.001, "epochs": 8, "batch_size": 32, "seed": 0,
            "beta1": 0.9, "beta2": 0.999, "eps_adam": 1e-8
        },
        "unlearn": {
            "lr": 0.002, "epochs": 1, "forget_batch": 8, "retain_batch": 16,
            "projection": "always", "seed": 0
        },
        "classifier": {
            "hidden_dims": [16], "lr": 0.001, "epochs": 40, "batch_size": 32,
            "seed": 0, "holdout_fraction": 0.25, "restarts": 2
        },
        "eval": { "n_samples": 300, "seed": 0, "target_class": 1 },
        "output_dir": out_dir
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_model_classifier_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["train", "--config", cfg]);
    assert!(out_dir.join("before.vaeu").exists());
    assert!(out_dir.join("clf.vaeu").exists());

    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);
    assert_eq!(manifest["dataset"]["n"], json!(240));
    assert_eq!(manifest["n_forget"], json!(120));
    assert_eq!(manifest["n_retain"], json!(120));
    assert!(manifest["classifier_holdout_accuracy"].as_f64().unwrap() >= 0.95);
}

#[test]
fn eval_table_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["train", "--config", cfg]);
    run_ok(&["unlearn", "--config", cfg, "--method", "surgery"]);
    run_ok(&["eval", "--config", cfg]);
    let first = fs::read(out_dir.join("table.csv")).unwrap();
    run_ok(&["eval", "--config", cfg]);
    let second = fs::read(out_dir.join("table.csv")).unwrap();
    assert_eq!(first, second, "eval must be reproducible byte for byte");

    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "model,fratio,score,fd,time_s");
    assert!(lines[2].starts_with("before,"));
    assert!(lines[3].starts_with("surgery,"));
    assert_eq!(lines.len(), 4);
}

#[test]
fn surgery_trace_records_projected_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["train", "--config", cfg]);
    run_ok(&["unlearn", "--config", cfg, "--method", "surgery"]);

    let text = fs::read_to_string(out_dir.join("trace_surgery.jsonl")).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let meta = &lines[0];
    assert_eq!(meta["record"], json!("meta"));
    assert_eq!(meta["method"], json!("surgery"));
    // 120 forget examples in batches of 8.
    assert_eq!(meta["steps"], json!(15));
    assert_eq!(meta["steps"].as_u64().unwrap() as usize, lines.len() - 1);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 16);
    for step in &lines[1..] {
        assert_eq!(step["record"], json!("step"));
        let after = step["dot_after"].as_f64().unwrap();
        assert!(after.abs() <= 1e-8, "projection left conflict {after}");
    }
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), &base_config(&out_a));
    let cfg_a = cfg_a.to_str().unwrap();

    run_ok(&["train", "--config", cfg_a]);
    let hash_a = read_json(&out_a.join("manifest.json"))["config_hash"].clone();

    let cfg_b = dir.path().join("config_b.json");
    fs::write(&cfg_b, serde_json::to_string(&base_config(&out_b)).unwrap()).unwrap();
    run_ok(&[
        "train",
        "--config",
        cfg_b.to_str().unwrap(),
        "--set",
        "train.lr=0.002",
    ]);
    let hash_b = read_json(&out_b.join("manifest.json"))["config_hash"].clone();
    assert_ne!(hash_a, hash_b);

    let bad = run(&["train", "--config", cfg_a, "--set", "missing_equals"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("KEY=VALUE"));
}

#[test]
fn mismatched_config_hash_is_refused_without_allow_mixed() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["train", "--config", cfg]);
    let refused = run(&[
        "unlearn",
        "--config",
        cfg,
        "--method",
        "surgery",
        "--set",
        "train.epochs=9",
    ]);
    assert_eq!(code(&refused), 1);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("config"));

    run_ok(&[
        "unlearn",
        "--config",
        cfg,
        "--method",
        "surgery",
        "--set",
        "train.epochs=9",
        "--allow-mixed",
    ]);
}

#[test]
fn exit_codes_separate_usage_data_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    // Usage: missing required flag, unknown subcommand.
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["frobnicate", "--config", cfg])), 1);
    // Help and version are not errors.
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);

    // Configuration rejected by validation: exit 1.
    let invalid = run(&[
        "train",
        "--config",
        cfg,
        "--set",
        "dataset.pattern_scale=0.9",
    ]);
    assert_eq!(code(&invalid), 1);

    // Unreadable config file: exit 2.
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{not json").unwrap();
    assert_eq!(code(&run(&["train", "--config", broken.to_str().unwrap()])), 2);

    // Missing checkpoints: exit 2.
    assert_eq!(code(&run(&["eval", "--config", cfg])), 2);

    // Corrupt checkpoint: exit 2.
    run_ok(&["train", "--config", cfg]);
    let model_path = out_dir.join("before.vaeu");
    let bytes = fs::read(&model_path).unwrap();
    fs::write(&model_path, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&run(&["eval", "--config", cfg])), 2);
}

#[test]
fn ci_gate_reports_failure_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["train", "--config", cfg]);
    // The gate needs the surgery checkpoint.
    assert_eq!(code(&run(&["eval", "--config", cfg, "--ci"])), 1);

    run_ok(&["unlearn", "--config", cfg, "--method", "surgery"]);
    // This deliberately uncalibrated schedule barely moves the feature
    // ratio, so the gate must fail and say so.
    let gated = run(&["eval", "--config", cfg, "--ci"]);
    assert_eq!(code(&gated), 4);
    assert!(String::from_utf8_lossy(&gated.stdout).contains("[FAIL] feature ratio gate"));
}

#[test]
fn repro_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["repro", "--config", cfg]);
    for name in [
        "before.vaeu",
        "clf.vaeu",
        "after_surgery.vaeu",
        "after_ascent.vaeu",
        "after_retrain.vaeu",
        "trace_surgery.jsonl",
        "trace_ascent.jsonl",
        "manifest.json",
        "table.csv",
        "audit.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }

    let audit = read_json(&out_dir.join("audit.json"));
    assert_eq!(audit["mode"], json!("model"));
    assert_eq!(audit["pairs_used"], json!(100));
    let ratio = audit["conflict_ratio"].as_f64().unwrap();
    assert!(
        ratio < 1e-8,
        "projection must null the sampled conflicts, got {ratio}"
    );

    let table = fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 6, "comment, header, four models");
}

#[test]
fn probe_audit_matches_exact_refits() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &base_config(&out_dir));
    let cfg = cfg.to_str().unwrap();

    run_ok(&["influence-audit", "--config", cfg, "--probe"]);
    let audit = read_json(&out_dir.join("audit.json"));
    assert_eq!(audit["mode"], json!("probe"));
    assert!(audit["loo_pearson_min"].as_f64().unwrap() > 0.95);
    assert!(audit["param_shift_cosine_mean"].as_f64().unwrap() > 0.99);
    assert!(audit["group_second_order_rel_err"].as_f64().unwrap() < 1e-6);
}

#[test]
fn idx_files_feed_the_same_pipeline() {
    use unlearn_core::data::{save_idx, SynthConfig};
    use unlearn_core::synth_dataset;

    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&SynthConfig {
        n: 240,
        classes: vec![1, 3],
        class_weights: None,
        image_dim: 16,
        noise_std: 0.05,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    save_idx(&ds, 4, 4, &images, &labels).unwrap();

    let out_dir = dir.path().join("out");
    let mut cfg = base_config(&out_dir);
    cfg["dataset"] = json!({
        "kind": "idx",
        "images": images,
        "labels": labels,
        "classes": [1, 3],
        "limit": 200
    });
    let cfg = write_config(dir.path(), &cfg);

    run_ok(&["train", "--config", cfg.to_str().unwrap()]);
    let manifest = read_json(&out_dir.join("manifest.json"));
    let source = manifest["dataset"]["source_id"].as_str().unwrap();
    assert!(source.starts_with("idx:"), "source was {source}");
    assert_eq!(manifest["dataset"]["n"], json!(200));
}
