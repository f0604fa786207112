//! Subcommand implementations.
//!
//! Every artifact is stamped with the config hash; steps that consume
//! artifacts refuse inputs produced under a different config unless
//! `--allow-mixed` is given. File layout inside `output_dir`:
//!
//! - `before.vaeu`, `clf.vaeu`: trained model and feature classifier
//! - `after_<method>.vaeu`: model after surgery, ascent or retraining
//! - `trace_<method>.jsonl`: per-step unlearning trace (surgery, ascent)
//! - `manifest.json`, `table.csv`, `audit.json`: run metadata and results

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use unlearn_core::data::DatasetSplit;
use unlearn_core::eval::{csv_header, csv_row, train_feature_classifier, FeatureClassifier};
use unlearn_core::influence::{
    group_grad_sum, influence_up_loss, influence_up_param, loo_retrain_oracle,
    second_order_group_influence, ConvexProbe, InfluenceTarget, ProbeKind,
};
use unlearn_core::surgeon::{
    gradient_ascent_unlearn, one_shot_unlearn, project_gradient, retrain_oracle, UnlearnTrace,
};
use unlearn_core::{
    load_idx, make_split, run_eval, subset_classes, synth_dataset, train, Error, EvalReport,
    ForgetSpec, InfluenceConfig, LabeledDataset, ParamVector, ProjectionRule, Result,
    VaeInfluenceTarget, VaeModel,
};

use crate::config::{DatasetConfig, ExperimentConfig};

pub const BEFORE_FILE: &str = "before.vaeu";
pub const CLF_FILE: &str = "clf.vaeu";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TABLE_FILE: &str = "table.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const METHODS: [&str; 3] = ["surgery", "ascent", "retrain"];

/// Release gate checked by `eval --ci`: surgery must cut the forget-class
/// feature ratio to at most this fraction of the pre-unlearning value.
const CI_RATIO_FRACTION: f64 = 0.6;

/// Conflict audit size: sampled (forget group, retained example) pairs.
const AUDIT_PAIRS: usize = 100;

/// Convex probe protocol for `influence-audit --probe`.
const PROBE_N: usize = 160;
const PROBE_DIM: usize = 12;
const PROBE_LAMBDA: f64 = 1e-2;
const PROBE_STRIDE: usize = 5;
const PROBE_GROUP: usize = 16;

pub fn after_file(method: &str) -> String {
    format!("after_{method}.vaeu")
}

pub fn trace_file(method: &str) -> String {
    format!("trace_{method}.jsonl")
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    match &cfg.dataset {
        DatasetConfig::Synth(synth) => synth_dataset(synth),
        DatasetConfig::Idx {
            images,
            labels,
            classes,
            limit,
        } => {
            let mut ds = load_idx(images, labels)?;
            if let Some(keep) = classes {
                ds = subset_classes(&ds, keep)?;
            }
            if let Some(k) = limit {
                if *k < ds.n() {
                    let head: Vec<usize> = (0..*k).collect();
                    ds = ds.select(&head)?;
                }
            }
            Ok(ds)
        }
    }
}

/// Build the dataset and the forget/retain split, with cross checks the
/// per-field validation cannot do.
fn prepare(cfg: &ExperimentConfig) -> Result<(LabeledDataset, DatasetSplit)> {
    let ds = build_dataset(cfg)?;
    if cfg.arch.input_dim != ds.dim() {
        return Err(Error::Config(format!(
            "arch.input_dim ({}) does not match the dataset dimension ({})",
            cfg.arch.input_dim,
            ds.dim()
        )));
    }
    if ds.indices_of_class(cfg.forget_class).is_empty() {
        return Err(Error::Config(format!(
            "forget_class {} has no examples; dataset classes are {:?}",
            cfg.forget_class,
            ds.class_set()
        )));
    }
    let split = make_split(&ds, &ForgetSpec::Class(cfg.forget_class))?;
    Ok((ds, split))
}

fn check_hash(stored: &Option<String>, current: &str, what: &str, allow_mixed: bool) -> Result<()> {
    if allow_mixed {
        return Ok(());
    }
    match stored {
        Some(h) if h == current => Ok(()),
        Some(h) => Err(Error::Config(format!(
            "{what} was produced by config {h}, but the current config is {current}; \
             rerun the producing step or pass --allow-mixed"
        ))),
        None => Err(Error::Config(format!(
            "{what} carries no config hash; pass --allow-mixed to use it anyway"
        ))),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, hash: &str) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let (ds, split) = prepare(cfg)?;
    println!(
        "dataset {}: {} examples, dim {}, {} forget / {} retain",
        ds.source_id,
        ds.n(),
        ds.dim(),
        split.forget.len(),
        split.retain.len()
    );

    let (model, report) = train(&cfg.arch, &ds.images, &cfg.train, &ds.source_id)?;
    let final_loss = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs in {:.2}s, final loss {:.4}",
        cfg.train.epochs, report.wall_seconds, final_loss
    );
    let before_path = cfg.output_dir.join(BEFORE_FILE);
    model.save(&before_path, Some(hash))?;

    let clf = train_feature_classifier(&ds, &cfg.classifier)?;
    println!("classifier holdout accuracy {:.4}", clf.holdout_accuracy);
    clf.save(&cfg.output_dir.join(CLF_FILE), Some(hash))?;

    let manifest = json!({
        "config_hash": hash,
        "dataset": ds.manifest(),
        "forget_class": cfg.forget_class,
        "n_forget": split.forget.len(),
        "n_retain": split.retain.len(),
        "train_wall_seconds": report.wall_seconds,
        "final_train_loss": final_loss,
        "classifier_holdout_accuracy": clf.holdout_accuracy,
        "artifacts": { "model": BEFORE_FILE, "classifier": CLF_FILE },
    });
    write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;
    println!("wrote {}", cfg.output_dir.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn cmd_unlearn(
    cfg: &ExperimentConfig,
    hash: &str,
    method: &str,
    allow_mixed: bool,
) -> Result<()> {
    let (_, split) = prepare(cfg)?;
    let before_path = cfg.output_dir.join(BEFORE_FILE);
    let (before, stored) = VaeModel::load(&before_path)?;
    check_hash(&stored, hash, BEFORE_FILE, allow_mixed)?;

    match method {
        "surgery" => {
            let (after, trace) = one_shot_unlearn(&before, &split, &cfg.unlearn)?;
            finish_unlearn(cfg, hash, method, &after, &trace)
        }
        "ascent" => {
            let (after, trace) = gradient_ascent_unlearn(&before, &split, &cfg.unlearn)?;
            finish_unlearn(cfg, hash, method, &after, &trace)
        }
        "retrain" => {
            let (after, report) = retrain_oracle(&cfg.arch, &split, &cfg.train)?;
            after.save(&cfg.output_dir.join(after_file(method)), Some(hash))?;
            println!(
                "retrained on the retain set: {} epochs in {:.2}s",
                cfg.train.epochs, report.wall_seconds
            );
            Ok(())
        }
        other => Err(Error::Config(format!("unknown unlearn method {other:?}"))),
    }
}

fn finish_unlearn(
    cfg: &ExperimentConfig,
    hash: &str,
    method: &str,
    after: &VaeModel,
    trace: &UnlearnTrace,
) -> Result<()> {
    after.save(&cfg.output_dir.join(after_file(method)), Some(hash))?;
    let file = File::create(cfg.output_dir.join(trace_file(method)))?;
    let mut writer = BufWriter::new(file);
    trace.write_jsonl(&mut writer, &cfg.unlearn, method, Some(hash))?;
    writer.flush()?;

    println!(
        "{method} finished: {} steps in {:.2}s",
        trace.steps.len(),
        trace.wall_seconds
    );
    if trace.degenerate_retain_steps > 0 {
        println!(
            "note: {} steps had a degenerate retain gradient (no projection applied)",
            trace.degenerate_retain_steps
        );
    }
    if let Some(step) = trace.diverged_at {
        println!("note: update diverged at step {step}; the last finite parameters were kept");
    }
    Ok(())
}

/// Returns false only when `--ci` is set and the gate fails.
pub fn cmd_eval(cfg: &ExperimentConfig, hash: &str, ci: bool, allow_mixed: bool) -> Result<bool> {
    let (_, split) = prepare(cfg)?;
    let reference = split.retain_images()?;

    let (clf, stored) = FeatureClassifier::load(&cfg.output_dir.join(CLF_FILE))?;
    check_hash(&stored, hash, CLF_FILE, allow_mixed)?;
    let (before, stored) = VaeModel::load(&cfg.output_dir.join(BEFORE_FILE))?;
    check_hash(&stored, hash, BEFORE_FILE, allow_mixed)?;

    let mut models: Vec<(String, VaeModel)> = vec![("before".to_string(), before)];
    for method in METHODS {
        let path = cfg.output_dir.join(after_file(method));
        if path.exists() {
            let (model, stored) = VaeModel::load(&path)?;
            check_hash(&stored, hash, &after_file(method), allow_mixed)?;
            models.push((method.to_string(), model));
        }
    }

    let mut table = format!("# config_hash={hash}\n{}\n", csv_header());
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for (label, model) in &models {
        let report = run_eval(model, &clf, &reference, &cfg.eval)?;
        table.push_str(&csv_row(label, &report, model.meta.wall_seconds));
        table.push('\n');
        reports.push((label.clone(), report));
    }
    fs::write(cfg.output_dir.join(TABLE_FILE), &table)?;
    print!("{table}");
    println!("wrote {}", cfg.output_dir.join(TABLE_FILE).display());

    if ci {
        let before_ratio = reports[0].1.fratio;
        let surgery = reports
            .iter()
            .find(|(label, _)| label == "surgery")
            .ok_or_else(|| {
                Error::Config(
                    "--ci needs after_surgery.vaeu; run `unlearn --method surgery` first".into(),
                )
            })?;
        let bound = CI_RATIO_FRACTION * before_ratio;
        let ok = surgery.1.fratio <= bound;
        println!(
            "[{}] feature ratio gate: surgery {:.6} vs bound {:.6} ({} x before {:.6})",
            if ok { "PASS" } else { "FAIL" },
            surgery.1.fratio,
            bound,
            CI_RATIO_FRACTION,
            before_ratio
        );
        return Ok(ok);
    }
    Ok(true)
}

pub fn cmd_influence_audit(
    cfg: &ExperimentConfig,
    hash: &str,
    probe: bool,
    allow_mixed: bool,
) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut payload = if probe {
        probe_audit(cfg.train.seed)?
    } else {
        model_audit(cfg, hash, allow_mixed)?
    };
    payload
        .as_object_mut()
        .expect("audit payload is an object")
        .insert("config_hash".to_string(), json!(hash));
    let path = cfg.output_dir.join(AUDIT_FILE);
    write_json(&path, &payload)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Leave-one-out influence check on a convex probe, where closed-form
/// refits make the ground truth cheap: correlation of predicted vs actual
/// loss changes, alignment of predicted vs actual parameter shifts, and
/// the second-order group direction against dense linear algebra.
fn probe_audit(seed: u64) -> Result<Value> {
    let n = PROBE_N;
    let d = PROBE_DIM;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut features = DMatrix::zeros(n, d);
    let mut targets = DVector::zeros(n);
    for i in 0..n {
        let mut margin = 0.0;
        for j in 0..d {
            let x: f64 = rng.gen_range(-1.0..1.0);
            features[(i, j)] = x;
            margin += x * w[j];
        }
        let noise: f64 = rng.gen_range(-0.5..0.5);
        targets[i] = if margin + noise >= 0.0 { 1.0 } else { -1.0 };
    }
    let probe = ConvexProbe::fit(ProbeKind::Logistic, features, targets, PROBE_LAMBDA)?;
    let inf_cfg = InfluenceConfig {
        damping: 1e-9,
        cg_tol: 1e-12,
        cg_max_iter: 5000,
    };
    let theta = probe.theta();
    let loo_shifts: Vec<ParamVector> = (0..n)
        .map(|z| loo_retrain_oracle(&probe, z))
        .collect::<Result<_>>()?;

    // Removing z changes the loss at z' by about (1/n) influence_up_loss.
    let z_primes = [n / 5, n / 2, 4 * n / 5];
    let mut pearson_min = f64::INFINITY;
    for &zp in &z_primes {
        let base = probe.sample_loss_at(&theta, zp);
        let mut actual = Vec::with_capacity(n);
        let mut predicted = Vec::with_capacity(n);
        for (z, shift) in loo_shifts.iter().enumerate() {
            let loo_theta = theta.add(shift);
            actual.push(probe.sample_loss_at(&loo_theta, zp) - base);
            predicted.push(influence_up_loss(&probe, z, zp, &inf_cfg)? / n as f64);
        }
        pearson_min = pearson_min.min(pearson(&actual, &predicted));
    }

    // theta_loo - theta_hat against -(1/n) influence_up_param.
    let mut cosines = Vec::new();
    for z in (0..n).step_by(PROBE_STRIDE) {
        let predicted = influence_up_param(&probe, z, &inf_cfg)?
            .vector
            .scaled(-1.0 / n as f64);
        cosines.push(loo_shifts[z].cosine(&predicted));
    }
    let cos_mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let cos_min = cosines.iter().copied().fold(f64::INFINITY, f64::min);

    // Second-order group direction vs a dense solve on H + damping I.
    let group: Vec<usize> = (0..PROBE_GROUP).collect();
    let p = group.len() as f64 / n as f64;
    let hess = probe.mean_hessian_dense() + DMatrix::identity(d, d) * inf_cfg.damping;
    let chol = Cholesky::new(hess)
        .ok_or_else(|| Error::Optimizer("probe Hessian is not positive definite".into()))?;
    let u = group_grad_sum(&probe, &group)?;
    let v = chol.solve(&DVector::from_column_slice(u.as_slice()));
    let h_group = probe.subset_hessian_dense(&group)?;
    let term = chol.solve(&(&h_group * &v));
    let dense = (v - term) * (p / (1.0 - p));
    let dense = ParamVector::from_vec(dense.as_slice().to_vec());
    let cg = second_order_group_influence(&probe, &group, &inf_cfg)?;
    let second_rel = cg.vector.sub(&dense).norm() / dense.norm();

    println!(
        "probe audit: loo pearson >= {:.4}, shift cosine mean {:.6}, second-order rel err {:.3e}",
        pearson_min, cos_mean, second_rel
    );
    Ok(json!({
        "mode": "probe",
        "n": n,
        "dim": d,
        "lambda": PROBE_LAMBDA,
        "seed": seed,
        "loo_pearson_min": pearson_min,
        "param_shift_cosine_mean": cos_mean,
        "param_shift_cosine_min": cos_min,
        "group_second_order_rel_err": second_rel,
    }))
}

/// Conflict audit on the trained model: for sampled (forget group,
/// retained example) pairs, the inner product between the retained
/// example's gradient and the summed forget gradient, before and after
/// projecting the forget gradient orthogonal to it.
fn model_audit(cfg: &ExperimentConfig, hash: &str, allow_mixed: bool) -> Result<Value> {
    let (ds, split) = prepare(cfg)?;
    let (model, stored) = VaeModel::load(&cfg.output_dir.join(BEFORE_FILE))?;
    check_hash(&stored, hash, BEFORE_FILE, allow_mixed)?;

    let target = VaeInfluenceTarget::new(&model, &ds.images, cfg.unlearn.seed);
    let group_size = cfg.unlearn.forget_batch.min(split.forget.len());
    if group_size == 0 {
        return Err(Error::Empty("forget set"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.unlearn.seed);
    let mut sum_before = 0.0;
    let mut sum_after = 0.0;
    let mut used = 0usize;
    let mut degenerate = 0usize;
    for _ in 0..AUDIT_PAIRS {
        let group: Vec<usize> = split
            .forget
            .choose_multiple(&mut rng, group_size)
            .copied()
            .collect();
        let zp = *split.retain.choose(&mut rng).ok_or(Error::Empty("retain set"))?;
        let g_sum = group_grad_sum(&target, &group)?;
        let g_zp = target.sample_grad(zp)?;
        let projected = project_gradient(&g_sum, &g_zp, ProjectionRule::Always);
        if projected.degenerate {
            degenerate += 1;
            continue;
        }
        sum_before += g_zp.dot(&g_sum).abs();
        sum_after += g_zp.dot(&projected.grad).abs();
        used += 1;
    }
    if used == 0 || sum_before == 0.0 {
        return Err(Error::DegenerateVector {
            what: "conflict audit gradients",
            norm: sum_before,
        });
    }
    let ratio = sum_after / sum_before;
    println!(
        "conflict audit: {} pairs, mean |conflict| {:.3e} before vs {:.3e} after (ratio {:.3e})",
        used,
        sum_before / used as f64,
        sum_after / used as f64,
        ratio
    );
    Ok(json!({
        "mode": "model",
        "pairs_used": used,
        "degenerate_pairs": degenerate,
        "group_size": group_size,
        "mean_abs_conflict_before": sum_before / used as f64,
        "mean_abs_conflict_after": sum_after / used as f64,
        "conflict_ratio": ratio,
    }))
}

/// Full pipeline under one config: train, all three unlearn methods,
/// evaluation, conflict audit. Returns the eval gate result.
pub fn cmd_repro(cfg: &ExperimentConfig, hash: &str, ci: bool) -> Result<bool> {
    println!("== train ==");
    cmd_train(cfg, hash)?;
    for method in METHODS {
        println!("== unlearn {method} ==");
        cmd_unlearn(cfg, hash, method, false)?;
    }
    println!("== eval ==");
    let ok = cmd_eval(cfg, hash, ci, false)?;
    println!("== influence audit ==");
    cmd_influence_audit(cfg, hash, false, false)?;
    Ok(ok)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}
