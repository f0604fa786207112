//! Adam training loop for the VAE.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamVector, Tensor};
use crate::error::{Error, Result};
use crate::vae::{mix_seed, LossKind, LossSpec, ModelMeta, VaeArch, VaeModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    #[serde(default = "default_loss_kind")]
    pub loss: LossKind,
}

fn default_loss_kind() -> LossKind {
    LossKind::Elbo
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 30,
            batch_size: 128,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            loss: LossKind::Elbo,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub wall_seconds: f64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ParamVector,
    v: ParamVector,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_moments(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Train a fresh VAE on `images` (rows are samples in [0, 1] for the
/// bernoulli likelihood). Deterministic for a fixed config and seed.
pub fn train(
    arch: &VaeArch,
    images: &Tensor,
    cfg: &TrainConfig,
    dataset_id: &str,
) -> Result<(VaeModel, TrainReport)> {
    if images.n_rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be >= 1".into()));
    }

    let start = Instant::now();
    let mut model = VaeModel::init(arch.clone(), cfg.seed)?;
    let mut opt =
        Adam::new(model.params.len(), cfg.lr).with_moments(cfg.beta1, cfg.beta2, cfg.eps_adam);
    let n = images.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, 0x0e0c));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = images.select_rows(chunk)?;
            let spec = LossSpec {
                kind: cfg.loss,
                noise_seed: mix_seed(cfg.seed, epoch as u64, step as u64),
            };
            let (loss, grad) = match model.loss_and_grad(&batch, &spec) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            opt.step(&mut model.params, &grad);
            loss_sum += loss;
            steps += 1;
        }
        epoch_loss.push(loss_sum / steps as f64);
    }

    let wall_seconds = start.elapsed().as_secs_f64();
    model.meta = ModelMeta {
        method: "train".to_string(),
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: cfg.seed,
        dataset_id: dataset_id.to_string(),
        wall_seconds,
    };
    Ok((
        model,
        TrainReport {
            epoch_loss,
            wall_seconds,
        },
    ))
}
