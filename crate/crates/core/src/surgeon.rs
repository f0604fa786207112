//! Gradient-surgery unlearning.
//!
//! Each step takes an ascent direction on the forget batch (the gradient of
//! the negative forget ELBO), removes its component along the retain-batch
//! gradient by orthogonal projection, and applies a plain SGD update. One
//! epoch over the forget set is the one-shot regime. A retrain-from-scratch
//! oracle on the retain set provides the reference model and timing.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::diffcore::ParamVector;
use crate::error::{Error, Result};
use crate::vae::{mix_seed, LossSpec, ModelMeta, TrainConfig, TrainReport, VaeArch, VaeModel};

/// Retain gradients with squared norm at or below this are treated as
/// degenerate and left unprojected (flagged in the trace).
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Project on every step.
    Always,
    /// Project only when the directions conflict (negative inner product).
    OnConflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlearnMode {
    Surgery,
    Ascent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub lr: f64,
    pub epochs: usize,
    pub forget_batch: usize,
    pub retain_batch: usize,
    pub projection: ProjectionRule,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 1,
            forget_batch: 128,
            retain_batch: 256,
            projection: ProjectionRule::Always,
            seed: 0,
        }
    }
}

/// Result of projecting one gradient against another.
#[derive(Debug, Clone)]
pub struct Projected {
    pub grad: ParamVector,
    /// Whether the projection was actually applied.
    pub applied: bool,
    /// True when the reference gradient was too small to project against.
    pub degenerate: bool,
}

/// Remove from `g_f` its component along `g_r`:
/// g_f - (g_f . g_r / ||g_r||^2) g_r.
pub fn project_gradient(g_f: &ParamVector, g_r: &ParamVector, rule: ProjectionRule) -> Projected {
    let r_sq = g_r.dot(g_r);
    if r_sq <= DEGENERATE_NORM * DEGENERATE_NORM {
        return Projected {
            grad: g_f.clone(),
            applied: false,
            degenerate: true,
        };
    }
    let dot = g_f.dot(g_r);
    if rule == ProjectionRule::OnConflict && dot >= 0.0 {
        return Projected {
            grad: g_f.clone(),
            applied: false,
            degenerate: false,
        };
    }
    let mut grad = g_f.clone();
    grad.axpy(-dot / r_sq, g_r);
    Projected {
        grad,
        applied: true,
        degenerate: false,
    }
}

/// A forget/retain gradient pair with its stored inner product and cosine.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub g_f: ParamVector,
    pub g_r: ParamVector,
    pub dot: f64,
    pub cos: f64,
}

impl GradientPair {
    pub fn new(g_f: ParamVector, g_r: ParamVector) -> Self {
        let dot = g_f.dot(&g_r);
        let cos = g_f.cosine(&g_r);
        Self { g_f, g_r, dot, cos }
    }

    /// Recompute the inner product and compare with the stored value.
    pub fn consistent(&self, rel_tol: f64) -> bool {
        let fresh = self.g_f.dot(&self.g_r);
        (fresh - self.dot).abs() <= rel_tol * (1.0 + self.dot.abs())
    }

    pub fn project(&self, rule: ProjectionRule) -> Projected {
        project_gradient(&self.g_f, &self.g_r, rule)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub dot_before: f64,
    pub dot_after: f64,
    pub gf_norm: f64,
    pub gr_norm: f64,
    pub loss_f: f64,
    pub loss_r: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct UnlearnTrace {
    pub steps: Vec<StepRecord>,
    pub wall_seconds: f64,
    pub degenerate_retain_steps: usize,
    /// Global step at which a non-finite loss aborted the run, if any.
    pub diverged_at: Option<usize>,
}

#[derive(Serialize)]
struct TraceMetaLine<'a> {
    record: &'static str,
    method: &'a str,
    config_hash: Option<&'a str>,
    lr: f64,
    epochs: usize,
    seed: u64,
    steps: usize,
    wall_seconds: f64,
    degenerate_retain_steps: usize,
    diverged_at: Option<usize>,
}

#[derive(Serialize)]
struct TraceStepLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    step: &'a StepRecord,
}

impl UnlearnTrace {
    /// One JSON object per line: a leading meta record, then the steps.
    pub fn write_jsonl<W: Write>(
        &self,
        mut w: W,
        cfg: &UnlearnConfig,
        method: &str,
        config_hash: Option<&str>,
    ) -> Result<()> {
        let meta = TraceMetaLine {
            record: "meta",
            method,
            config_hash,
            lr: cfg.lr,
            epochs: cfg.epochs,
            seed: cfg.seed,
            steps: self.steps.len(),
            wall_seconds: self.wall_seconds,
            degenerate_retain_steps: self.degenerate_retain_steps,
            diverged_at: self.diverged_at,
        };
        writeln!(w, "{}", serde_json::to_string(&meta)?)?;
        for step in &self.steps {
            let line = TraceStepLine {
                record: "step",
                step,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }
}

/// One-shot unlearning with gradient surgery.
pub fn one_shot_unlearn(
    model: &VaeModel,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
) -> Result<(VaeModel, UnlearnTrace)> {
    run_unlearn(model, split, cfg, UnlearnMode::Surgery)
}

/// Plain gradient ascent on the forget loss (no projection), same step
/// size and schedule as surgery.
pub fn gradient_ascent_unlearn(
    model: &VaeModel,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
) -> Result<(VaeModel, UnlearnTrace)> {
    run_unlearn(model, split, cfg, UnlearnMode::Ascent)
}

fn run_unlearn(
    model: &VaeModel,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
    mode: UnlearnMode,
) -> Result<(VaeModel, UnlearnTrace)> {
    if cfg.forget_batch == 0 || cfg.retain_batch == 0 {
        return Err(Error::Config("batch sizes must be >= 1".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }

    let start = Instant::now();
    let mut out = model.clone();
    let forget_images = split.forget_images()?;
    let retain_pool = &split.retain;
    let mut trace = UnlearnTrace {
        steps: Vec::new(),
        wall_seconds: 0.0,
        degenerate_retain_steps: 0,
        diverged_at: None,
    };

    let mut last_good = out.params.clone();
    let mut global_step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..forget_images.n_rows()).collect();
        let mut shuffle_rng =
            ChaCha20Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, 0xf02_9e7));
        order.shuffle(&mut shuffle_rng);

        for chunk in order.chunks(cfg.forget_batch) {
            let step_start = Instant::now();
            let forget_batch = forget_images.select_rows(chunk)?;

            let k = cfg.retain_batch.min(retain_pool.len());
            let mut retain_rng =
                ChaCha20Rng::seed_from_u64(mix_seed(cfg.seed, global_step as u64, 0x004e_7a11));
            let picks = rand::seq::index::sample(&mut retain_rng, retain_pool.len(), k);
            let retain_idx: Vec<usize> = picks.iter().map(|i| retain_pool[i]).collect();
            let retain_batch = split.all.images.select_rows(&retain_idx)?;

            let forget_spec = LossSpec::elbo(mix_seed(cfg.seed, global_step as u64, 0xf0));
            let retain_spec = LossSpec::elbo(mix_seed(cfg.seed, global_step as u64, 0x4e));

            let forget_eval = out.loss_and_grad(&forget_batch, &forget_spec);
            let retain_eval = out.loss_and_grad(&retain_batch, &retain_spec);
            let ((loss_f, g_elbo_f), (loss_r, g_r)) = match (forget_eval, retain_eval) {
                (Ok(f), Ok(r)) => (f, r),
                (Err(Error::NonFinite { .. }), _) | (_, Err(Error::NonFinite { .. })) => {
                    trace.diverged_at = Some(global_step);
                    break 'epochs;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            if !(loss_f.is_finite() && loss_r.is_finite()) {
                trace.diverged_at = Some(global_step);
                break 'epochs;
            }
            last_good = out.params.clone();

            // Ascent on the forget ELBO, encoded as a descent direction.
            let g_f = g_elbo_f.scaled(-1.0);
            let dot_before = g_f.dot(&g_r);
            let gf_norm = g_f.norm();
            let gr_norm = g_r.norm();

            let used = match mode {
                UnlearnMode::Surgery => {
                    let projected = project_gradient(&g_f, &g_r, cfg.projection);
                    if projected.degenerate {
                        trace.degenerate_retain_steps += 1;
                    }
                    projected.grad
                }
                UnlearnMode::Ascent => g_f,
            };
            let dot_after = used.dot(&g_r);

            out.params.axpy(-cfg.lr, &used);

            trace.steps.push(StepRecord {
                step: global_step,
                dot_before,
                dot_after,
                gf_norm,
                gr_norm,
                loss_f,
                loss_r,
                wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
            });
            global_step += 1;
        }
    }

    if trace.diverged_at.is_some() {
        out.params = last_good;
    }
    trace.wall_seconds = start.elapsed().as_secs_f64();

    let method = match mode {
        UnlearnMode::Surgery => "surgery",
        UnlearnMode::Ascent => "ascent",
    };
    out.meta = ModelMeta {
        method: method.to_string(),
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: cfg.seed,
        dataset_id: split.all.source_id.clone(),
        wall_seconds: trace.wall_seconds,
    };
    Ok((out, trace))
}

/// Reference model: retrain from scratch on the retain set only.
pub fn retrain_oracle(
    arch: &VaeArch,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(VaeModel, TrainReport)> {
    let retain = split.retain_images()?;
    let (mut model, report) = crate::vae::train(arch, &retain, cfg, &split.all.source_id)?;
    model.meta.method = "retrain".to_string();
    Ok((model, report))
}
