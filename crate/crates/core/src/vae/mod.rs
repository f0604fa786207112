//! Variational autoencoder: architecture, seeded model state, ELBO loss
//! with analytic gradients, sampling and reconstruction.
//!
//! Parameters are a single flat f64 vector, encoder first then decoder.
//! The encoder ends in an identity head of width 2 * latent (mean, log
//! variance); the decoder head is identity and emits logits under the
//! bernoulli likelihood or means under the gaussian one.

pub mod checkpoint;
pub mod train;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::net::{sigmoid, Activation, MlpSpec};
use crate::diffcore::threads::{chunked_loss_grad, thread_budget};
use crate::diffcore::{ParamVector, Tensor};
use crate::error::{Error, Result};

pub use train::{train, Adam, TrainConfig, TrainReport};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl VaeArch {
    /// 784 -> 256 -> 64 -> latent 16 with tanh units and bernoulli output.
    pub fn mnist_default() -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![256, 64],
            latent_dim: 16,
            activation: Activation::Tanh,
            likelihood: Likelihood::Bernoulli,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("input_dim and latent_dim must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden dims must be >= 1".into()));
        }
        match self.activation {
            Activation::Tanh | Activation::Relu => Ok(()),
            other => Err(Error::Config(format!(
                "unsupported hidden activation {other:?}; use tanh or relu"
            ))),
        }
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(2 * self.latent_dim);
        MlpSpec::chain(&dims, self.activation, Activation::Identity)
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let mut dims = vec![self.latent_dim];
        dims.extend(self.hidden_dims.iter().rev());
        dims.push(self.input_dim);
        MlpSpec::chain(&dims, self.activation, Activation::Identity)
    }

    pub fn param_count(&self) -> usize {
        self.encoder_spec().param_count() + self.decoder_spec().param_count()
    }
}

/// Provenance stamped into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub dataset_id: String,
    pub wall_seconds: f64,
}

impl ModelMeta {
    pub fn new(method: &str, epochs: usize, lr: f64, seed: u64, dataset_id: &str) -> Self {
        Self {
            method: method.to_string(),
            epochs,
            lr,
            seed,
            dataset_id: dataset_id.to_string(),
            wall_seconds: 0.0,
        }
    }
}

/// Which objective a gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Elbo,
    ReconstructionOnly,
}

/// Loss selector: objective plus the seed for the reparameterization noise.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub kind: LossKind,
    pub noise_seed: u64,
}

impl LossSpec {
    pub fn elbo(noise_seed: u64) -> Self {
        Self {
            kind: LossKind::Elbo,
            noise_seed,
        }
    }

    pub fn recon_only(noise_seed: u64) -> Self {
        Self {
            kind: LossKind::ReconstructionOnly,
            noise_seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub arch: VaeArch,
    pub params: ParamVector,
    pub meta: ModelMeta,
}

/// Deterministic standard-normal matrix, drawn row-major.
pub fn noise_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// splitmix64-style mixer for deriving stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(a.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(b.wrapping_mul(0x94d0_49bb_1331_11eb));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

impl VaeModel {
    /// Seeded initialization: W ~ N(0, 1/in_dim), biases zero.
    pub fn init(arch: VaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 0x1717, 0));
        let mut params = Vec::with_capacity(arch.param_count());
        for spec in [arch.encoder_spec(), arch.decoder_spec()] {
            for layer in &spec.layers {
                let std = (1.0 / layer.in_dim as f64).sqrt();
                for _ in 0..layer.out_dim * layer.in_dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    params.push(z * std);
                }
                params.extend(std::iter::repeat_n(0.0, layer.out_dim));
            }
        }
        Ok(Self {
            arch,
            params: ParamVector::from_vec(params),
            meta: ModelMeta::new("init", 0, 0.0, seed, "unset"),
        })
    }

    pub fn with_params(mut self, params: ParamVector) -> Result<Self> {
        if params.len() != self.arch.param_count() {
            return Err(Error::DimensionMismatch {
                what: "model parameters",
                expected: self.arch.param_count(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(self)
    }

    /// Mean loss and mean gradient over the batch at the model's parameters.
    pub fn loss_and_grad(&self, batch: &Tensor, spec: &LossSpec) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_at(&self.params, batch, spec)
    }

    /// Same, at an arbitrary parameter point (used by HVP probes).
    pub fn loss_and_grad_at(
        &self,
        params: &ParamVector,
        batch: &Tensor,
        spec: &LossSpec,
    ) -> Result<(f64, ParamVector)> {
        let pieces = self.batch_pass(params, batch, spec, true)?;
        Ok((pieces.0, pieces.1.expect("gradient requested")))
    }

    /// Mean loss only (cheaper; used by finite-difference oracles).
    pub fn loss_at(&self, params: &ParamVector, batch: &Tensor, spec: &LossSpec) -> Result<f64> {
        Ok(self.batch_pass(params, batch, spec, false)?.0)
    }

    fn batch_pass(
        &self,
        params: &ParamVector,
        batch: &Tensor,
        spec: &LossSpec,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        let b = batch.n_rows();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        if batch.row_dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                what: "batch width",
                expected: self.arch.input_dim,
                actual: batch.row_dim(),
            });
        }
        if params.len() != self.arch.param_count() {
            return Err(Error::DimensionMismatch {
                what: "model parameters",
                expected: self.arch.param_count(),
                actual: params.len(),
            });
        }
        if self.arch.likelihood == Likelihood::Bernoulli {
            let ok = batch.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v));
            if !ok {
                return Err(Error::Config(
                    "bernoulli likelihood requires inputs in [0, 1]".into(),
                ));
            }
        }

        let x = batch.to_f64_matrix();
        let eps_all = noise_matrix(spec.noise_seed, b, self.arch.latent_dim);
        let enc = self.arch.encoder_spec();
        let dec = self.arch.decoder_spec();
        let enc_count = enc.param_count();

        let eval = |range: std::ops::Range<usize>| -> Result<(f64, ParamVector)> {
            let xc = x.slice(s![range.clone(), ..]).to_owned();
            let eps = eps_all.slice(s![range, ..]).to_owned();
            let (loss_sum, grad) = self.chunk_pass(
                params, &enc, &dec, enc_count, &xc, &eps, spec.kind, want_grad,
            )?;
            Ok((loss_sum, grad.unwrap_or_else(|| ParamVector::zeros(0))))
        };

        let threads = if want_grad { thread_budget() } else { 1 };
        let (loss_sum, grad_sum) = chunked_loss_grad(b, threads, eval)?;

        let loss = loss_sum / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss" });
        }
        if !want_grad {
            return Ok((loss, None));
        }
        let mut grad = grad_sum;
        grad.scale(1.0 / b as f64);
        grad.check_finite("gradient")?;
        Ok((loss, Some(grad)))
    }

    #[allow(clippy::too_many_arguments)]
    fn chunk_pass(
        &self,
        params: &ParamVector,
        enc: &MlpSpec,
        dec: &MlpSpec,
        enc_count: usize,
        x: &Array2<f64>,
        eps: &Array2<f64>,
        kind: LossKind,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        let latent = self.arch.latent_dim;
        let p = params.as_slice();
        let (enc_params, dec_params) = p.split_at(enc_count);

        let (enc_out, enc_cache) = enc.forward(enc_params, x);
        let mu = enc_out.slice(s![.., 0..latent]).to_owned();
        let logvar = enc_out.slice(s![.., latent..2 * latent]).to_owned();

        let std_half = logvar.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&std_half * eps);

        let (dec_out, dec_cache) = dec.forward(dec_params, &z);

        // Reconstruction negative log-likelihood per element, plus its
        // derivative with respect to the decoder output.
        let mut loss_sum = 0.0;
        let mut d_dec = Array2::<f64>::zeros(dec_out.dim());
        match self.arch.likelihood {
            Likelihood::Bernoulli => {
                ndarray::Zip::from(&mut d_dec)
                    .and(&dec_out)
                    .and(x)
                    .for_each(|d, &t, &xi| {
                        loss_sum += t.max(0.0) - t * xi + (-t.abs()).exp().ln_1p();
                        *d = sigmoid(t) - xi;
                    });
            }
            Likelihood::Gaussian => {
                ndarray::Zip::from(&mut d_dec)
                    .and(&dec_out)
                    .and(x)
                    .for_each(|d, &m, &xi| {
                        let r = m - xi;
                        loss_sum += 0.5 * (r * r + LN_2PI);
                        *d = r;
                    });
            }
        }

        if kind == LossKind::Elbo {
            // KL(q(z|x) || N(0, I)) = -1/2 sum(1 + logvar - mu^2 - exp(logvar))
            ndarray::Zip::from(&mu).and(&logvar).for_each(|&m, &lv| {
                loss_sum += -0.5 * (1.0 + lv - m * m - lv.exp());
            });
        }

        if !want_grad {
            return Ok((loss_sum, None));
        }

        let mut grad = ParamVector::zeros(params.len());
        let (gslice_enc, gslice_dec) = grad.as_mut_slice().split_at_mut(enc_count);
        let dz = dec.backward(dec_params, &dec_cache, &d_dec, gslice_dec);

        let mut d_mu = dz.clone();
        let mut d_logvar = &dz * eps * &std_half * 0.5;
        if kind == LossKind::Elbo {
            d_mu += &mu;
            ndarray::Zip::from(&mut d_logvar)
                .and(&logvar)
                .for_each(|d, &lv| *d += 0.5 * (lv.exp() - 1.0));
        }
        let mut d_enc_out = Array2::<f64>::zeros((x.nrows(), 2 * latent));
        d_enc_out.slice_mut(s![.., 0..latent]).assign(&d_mu);
        d_enc_out.slice_mut(s![.., latent..2 * latent]).assign(&d_logvar);
        enc.backward(enc_params, &enc_cache, &d_enc_out, gslice_enc);

        Ok((loss_sum, Some(grad)))
    }

    /// Decode `n` prior samples. Bernoulli outputs pass through a sigmoid,
    /// so they land in [0, 1]; gaussian outputs are raw means.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::Empty("sample request"));
        }
        let z = noise_matrix(seed, n, self.arch.latent_dim);
        self.decode(&z)
    }

    /// Decode arbitrary latent codes.
    pub fn decode(&self, z: &Array2<f64>) -> Result<Tensor> {
        let dec = self.arch.decoder_spec();
        let enc_count = self.arch.encoder_spec().param_count();
        let dec_params = &self.params.as_slice()[enc_count..];
        let (out, _) = dec.forward(dec_params, z);
        let mapped = match self.arch.likelihood {
            Likelihood::Bernoulli => out.mapv(sigmoid),
            Likelihood::Gaussian => out,
        };
        Tensor::from_f64_matrix(&mapped)
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.row_dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                what: "batch width",
                expected: self.arch.input_dim,
                actual: batch.row_dim(),
            });
        }
        let x = batch.to_f64_matrix();
        let enc = self.arch.encoder_spec();
        let enc_count = enc.param_count();
        let (enc_out, _) = enc.forward(&self.params.as_slice()[..enc_count], &x);
        let mu = enc_out.slice(s![.., 0..self.arch.latent_dim]).to_owned();
        self.decode(&mu)
    }

    /// Posterior means for a batch (one row per sample).
    pub fn encode_mean(&self, batch: &Tensor) -> Result<Array2<f64>> {
        let x = batch.to_f64_matrix();
        let enc = self.arch.encoder_spec();
        let enc_count = enc.param_count();
        let (enc_out, _) = enc.forward(&self.params.as_slice()[..enc_count], &x);
        Ok(enc_out.slice(s![.., 0..self.arch.latent_dim]).to_owned())
    }

    /// Mean ELBO over a dataset, evaluated in fixed-size slabs.
    pub fn mean_loss(&self, data: &Tensor, spec: &LossSpec) -> Result<f64> {
        let n = data.n_rows();
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        let slab = 512;
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + slab).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let part = data.select_rows(&idx)?;
            let sub_spec = LossSpec {
                kind: spec.kind,
                noise_seed: mix_seed(spec.noise_seed, start as u64, 0x51ab),
            };
            let loss = self.loss_at(&self.params, &part, &sub_spec)?;
            total += loss * (end - start) as f64;
            start = end;
        }
        Ok(total / n as f64)
    }
}

/// Mean ELBO loss and gradient for a batch with seeded noise.
pub fn elbo_loss(model: &VaeModel, batch: &Tensor, noise_seed: u64) -> Result<(f64, ParamVector)> {
    model.loss_and_grad(batch, &LossSpec::elbo(noise_seed))
}

/// Batch-mean gradient of the selected objective.
pub fn compute_gradient(model: &VaeModel, batch: &Tensor, spec: &LossSpec) -> Result<ParamVector> {
    Ok(model.loss_and_grad(batch, spec)?.1)
}
