//! Evaluation harness: a small task classifier gated on holdout accuracy,
//! the feature ratio with a Wilson interval, the Frechet and score proxies,
//! and a combined report.

pub mod frechet;
pub mod score;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffcore::net::{softmax_rows, Activation, MlpSpec};
use crate::diffcore::{ParamVector, Tensor};
use crate::error::{Error, Result};
use crate::vae::checkpoint::{load_checkpoint, save_checkpoint};
use crate::vae::train::Adam;
use crate::vae::{mix_seed, VaeModel};

pub use frechet::frechet_from_features;
pub use score::score_from_posteriors;

/// Minimum holdout accuracy before any metric is trusted.
pub const ACCURACY_GATE: f64 = 0.95;

const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden_dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub restarts: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            lr: 1e-3,
            epochs: 40,
            batch_size: 64,
            seed: 0,
            holdout_fraction: 0.2,
            restarts: 3,
        }
    }
}

/// Softmax classifier whose penultimate layer doubles as the feature map
/// for the Frechet proxy.
#[derive(Debug, Clone)]
pub struct FeatureClassifier {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub classes: Vec<u8>,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierDescriptor {
    kind: String,
    spec: MlpSpec,
    classes: Vec<u8>,
    holdout_accuracy: f64,
    config_hash: Option<String>,
}

impl FeatureClassifier {
    fn gate(&self) -> Result<()> {
        if self.holdout_accuracy >= ACCURACY_GATE {
            Ok(())
        } else {
            Err(Error::AccuracyBar {
                accuracy: self.holdout_accuracy,
                required: ACCURACY_GATE,
            })
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Width of the penultimate layer.
    pub fn feature_dim(&self) -> usize {
        let l = self.spec.layers.len();
        self.spec.layers[l - 1].in_dim
    }

    pub fn logits(&self, batch: &Tensor) -> Array2<f64> {
        let x = batch.to_f64_matrix();
        let (out, _) = self.spec.forward(self.params.as_slice(), &x);
        out
    }

    pub fn posteriors(&self, batch: &Tensor) -> Array2<f64> {
        softmax_rows(&self.logits(batch))
    }

    /// Penultimate-layer activations.
    pub fn features(&self, batch: &Tensor) -> Array2<f64> {
        let l = self.spec.layers.len();
        let sub = MlpSpec {
            layers: self.spec.layers[..l - 1].to_vec(),
        };
        let x = batch.to_f64_matrix();
        let (out, _) = sub.forward(&self.params.as_slice()[..sub.param_count()], &x);
        out
    }

    pub fn predict(&self, batch: &Tensor) -> Vec<u8> {
        self.posteriors(batch)
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_p = f64::NEG_INFINITY;
                for (j, &p) in row.iter().enumerate() {
                    if p > best_p {
                        best_p = p;
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect()
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        let pred = self.predict(&data.images);
        let hits = pred
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / data.n() as f64
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let desc = ClassifierDescriptor {
            kind: "classifier".to_string(),
            spec: self.spec.clone(),
            classes: self.classes.clone(),
            holdout_accuracy: self.holdout_accuracy,
            config_hash: config_hash.map(str::to_string),
        };
        save_checkpoint(path, &desc, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let (desc, params): (ClassifierDescriptor, ParamVector) = load_checkpoint(path)?;
        if desc.kind != "classifier" {
            return Err(Error::Descriptor(format!(
                "expected a classifier checkpoint, found kind {:?}",
                desc.kind
            )));
        }
        if params.len() != desc.spec.param_count() {
            return Err(Error::DimensionMismatch {
                what: "classifier parameters",
                expected: desc.spec.param_count(),
                actual: params.len(),
            });
        }
        Ok((
            Self {
                spec: desc.spec,
                params,
                classes: desc.classes,
                holdout_accuracy: desc.holdout_accuracy,
            },
            desc.config_hash,
        ))
    }
}

fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(spec.param_count());
    for layer in &spec.layers {
        let std = (2.0 / layer.in_dim as f64).sqrt();
        for _ in 0..layer.out_dim * layer.in_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            params.push(z * std);
        }
        params.extend(std::iter::repeat_n(0.0, layer.out_dim));
    }
    ParamVector::from_vec(params)
}

fn ce_loss_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &Array2<f64>,
    targets: &[usize],
) -> (f64, ParamVector) {
    let b = x.nrows() as f64;
    let (logits, cache) = spec.forward(params.as_slice(), x);
    let p = softmax_rows(&logits);
    let mut loss = 0.0;
    let mut dlogits = p.clone();
    for (i, &t) in targets.iter().enumerate() {
        loss -= p[[i, t]].max(1e-300).ln();
        dlogits[[i, t]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / b);
    let mut grad = ParamVector::zeros(params.len());
    spec.backward(params.as_slice(), &cache, &dlogits, grad.as_mut_slice());
    (loss / b, grad)
}

/// Train the task classifier with seeded restarts until the holdout
/// accuracy gate is met; fails with the best accuracy reached otherwise.
pub fn train_feature_classifier(
    data: &LabeledDataset,
    cfg: &ClassifierConfig,
) -> Result<FeatureClassifier> {
    let classes = data.class_set();
    if classes.len() < 2 {
        return Err(Error::Config("classifier needs at least 2 classes".into()));
    }
    if cfg.hidden_dims.is_empty() {
        return Err(Error::Config(
            "classifier needs at least one hidden layer for the feature map".into(),
        ));
    }
    if !(0.05..=0.5).contains(&cfg.holdout_fraction) {
        return Err(Error::Config("holdout_fraction must be in [0.05, 0.5]".into()));
    }

    let mut dims = vec![data.dim()];
    dims.extend(&cfg.hidden_dims);
    dims.push(classes.len());
    let spec = MlpSpec::chain(&dims, Activation::Relu, Activation::Identity);

    let class_index: std::collections::BTreeMap<u8, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let targets: Vec<usize> = data.labels.iter().map(|l| class_index[l]).collect();

    let n = data.n();
    let holdout_n = ((n as f64 * cfg.holdout_fraction).round() as usize).clamp(1, n - 1);

    let mut best: Option<FeatureClassifier> = None;
    for restart in 0..cfg.restarts.max(1) {
        let run_seed = mix_seed(cfg.seed, restart as u64, 0xc1a5);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(run_seed);
        order.shuffle(&mut rng);
        let (holdout_idx, train_idx) = order.split_at(holdout_n);

        let mut params = init_params(&spec, mix_seed(run_seed, 1, 0x11));
        let mut opt = Adam::new(params.len(), cfg.lr);
        let mut train_order = train_idx.to_vec();
        for epoch in 0..cfg.epochs {
            let mut erng =
                ChaCha20Rng::seed_from_u64(mix_seed(run_seed, epoch as u64, 0xe0));
            train_order.shuffle(&mut erng);
            for chunk in train_order.chunks(cfg.batch_size) {
                let x = data.images.select_rows(chunk)?.to_f64_matrix();
                let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let (_, grad) = ce_loss_grad(&spec, &params, &x, &t);
                opt.step(&mut params, &grad);
            }
        }

        let candidate = FeatureClassifier {
            spec: spec.clone(),
            params,
            classes: classes.clone(),
            holdout_accuracy: 0.0,
        };
        let holdout = data.select(holdout_idx)?;
        let acc = candidate.accuracy(&holdout);
        let candidate = FeatureClassifier {
            holdout_accuracy: acc,
            ..candidate
        };
        if acc >= ACCURACY_GATE {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|b| acc > b.holdout_accuracy) {
            best = Some(candidate);
        }
    }
    let best_acc = best.map_or(0.0, |b| b.holdout_accuracy);
    Err(Error::AccuracyBar {
        accuracy: best_acc,
        required: ACCURACY_GATE,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureRatio {
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Wilson 95% interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    assert!(n > 0, "empty sample");
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z_95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Fraction of `samples` the classifier assigns to `target_class`.
pub fn feature_ratio_of_samples(
    samples: &Tensor,
    clf: &FeatureClassifier,
    target_class: u8,
) -> Result<FeatureRatio> {
    clf.gate()?;
    if !clf.classes.contains(&target_class) {
        return Err(Error::Config(format!(
            "target class {target_class} not among classifier classes {:?}",
            clf.classes
        )));
    }
    let n = samples.n_rows();
    if n == 0 {
        return Err(Error::Empty("sample set"));
    }
    let hits = clf
        .predict(samples)
        .iter()
        .filter(|&&c| c == target_class)
        .count();
    let (ci_low, ci_high) = wilson_interval(hits, n);
    Ok(FeatureRatio {
        ratio: hits as f64 / n as f64,
        ci_low,
        ci_high,
        n,
    })
}

/// Feature ratio over `n` fresh samples from the generator.
pub fn feature_ratio(
    model: &VaeModel,
    clf: &FeatureClassifier,
    target_class: u8,
    n: usize,
    seed: u64,
) -> Result<FeatureRatio> {
    let samples = model.generate(n, seed)?;
    feature_ratio_of_samples(&samples, clf, target_class)
}

/// Frechet proxy between two image sets in classifier feature space.
pub fn frechet_proxy(a: &Tensor, b: &Tensor, clf: &FeatureClassifier) -> Result<f64> {
    clf.gate()?;
    let fa = clf.features(a);
    let fb = clf.features(b);
    frechet_from_features(&fa, &fb)
}

/// Score proxy of an image set under the classifier.
pub fn score_proxy(samples: &Tensor, clf: &FeatureClassifier) -> Result<f64> {
    clf.gate()?;
    score_from_posteriors(&clf.posteriors(samples))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub target_class: u8,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 0,
            target_class: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub fratio: f64,
    pub fratio_ci_low: f64,
    pub fratio_ci_high: f64,
    pub score: f64,
    pub fd: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub target_class: u8,
    pub wall_seconds: f64,
}

/// Generate once, then compute all three metrics against a reference image
/// set (typically the retained training images). Deterministic for a fixed
/// seed apart from the wall-clock field.
pub fn run_eval(
    model: &VaeModel,
    clf: &FeatureClassifier,
    reference: &Tensor,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    clf.gate()?;
    let start = Instant::now();
    let samples = model.generate(cfg.n_samples, cfg.seed)?;
    let fr = feature_ratio_of_samples(&samples, clf, cfg.target_class)?;
    let score = score_proxy(&samples, clf)?;
    let fd = frechet_proxy(&samples, reference, clf)?;
    Ok(EvalReport {
        fratio: fr.ratio,
        fratio_ci_low: fr.ci_low,
        fratio_ci_high: fr.ci_high,
        score,
        fd,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        target_class: cfg.target_class,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Header for the results table.
pub fn csv_header() -> &'static str {
    "model,fratio,score,fd,time_s"
}

/// One results row; `time_s` is the producing run's recorded wall time.
pub fn csv_row(label: &str, report: &EvalReport, time_s: f64) -> String {
    format!(
        "{label},{:.6},{:.6},{:.6},{:.3}",
        report.fratio, report.score, report.fd, time_s
    )
}
