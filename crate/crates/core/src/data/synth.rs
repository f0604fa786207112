//! Synthetic striped-image dataset with a known per-pixel noise level.
//!
//! Each class has a fixed sinusoidal pattern; samples are the pattern plus
//! clamped gaussian noise. The best reconstruction that does not memorize
//! noise has mean squared error equal to the injected noise variance, which
//! gives training loops an analytic floor to be checked against.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: Vec<u8>,
    /// Per-class sampling weights; uniform when absent. Counts are exact
    /// (largest-remainder rounding), not sampled.
    pub class_weights: Option<Vec<f64>>,
    pub image_dim: usize,
    pub noise_std: f64,
    /// Amplitude of the class sinusoids around the 0.5 midline. Smaller
    /// values put the class modes closer together.
    #[serde(default = "default_pattern_scale")]
    pub pattern_scale: f64,
    pub seed: u64,
}

fn default_pattern_scale() -> f64 {
    0.28
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            classes: vec![1, 3, 8],
            class_weights: None,
            image_dim: 64,
            noise_std: 0.05,
            pattern_scale: default_pattern_scale(),
            seed: 0,
        }
    }
}

/// The clean (noise-free) pattern for a class at the default amplitude.
pub fn class_pattern(class: u8, dim: usize) -> Vec<f32> {
    class_pattern_scaled(class, dim, default_pattern_scale())
}

/// The clean (noise-free) pattern for a class with an explicit amplitude.
pub fn class_pattern_scaled(class: u8, dim: usize, scale: f64) -> Vec<f32> {
    let freq = 1.0 + f64::from(class % 7) * 0.75;
    let phase = f64::from(class) * 1.3;
    (0..dim)
        .map(|i| {
            let x = i as f64 / dim as f64;
            (0.5 + scale * (2.0 * std::f64::consts::PI * freq * x + phase).sin()) as f32
        })
        .collect()
}

/// Injected per-pixel noise variance (ignoring the rare clamp at [0, 1]).
pub fn noise_floor(cfg: &SynthConfig) -> f64 {
    cfg.noise_std * cfg.noise_std
}

fn class_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<LabeledDataset> {
    if cfg.n == 0 {
        return Err(Error::Empty("synthetic dataset request"));
    }
    if cfg.classes.is_empty() {
        return Err(Error::Empty("synthetic class list"));
    }
    if cfg.image_dim < 4 {
        return Err(Error::Config("image_dim must be at least 4".into()));
    }
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be non-negative".into()));
    }
    if !(cfg.pattern_scale.is_finite() && cfg.pattern_scale > 0.0 && cfg.pattern_scale <= 0.5) {
        return Err(Error::Config(
            "pattern_scale must be in (0, 0.5] to keep pixels in [0, 1]".into(),
        ));
    }
    let weights: Vec<f64> = match &cfg.class_weights {
        Some(w) => {
            if w.len() != cfg.classes.len() {
                return Err(Error::Config(
                    "class_weights length must match classes".into(),
                ));
            }
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::Config("class_weights must be positive".into()));
            }
            w.clone()
        }
        None => vec![1.0; cfg.classes.len()],
    };

    let counts = class_counts(cfg.n, &weights);
    let mut labels: Vec<u8> = Vec::with_capacity(cfg.n);
    for (class, count) in cfg.classes.iter().zip(&counts) {
        labels.extend(std::iter::repeat_n(*class, *count));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    labels.shuffle(&mut rng);

    let patterns: std::collections::BTreeMap<u8, Vec<f32>> = cfg
        .classes
        .iter()
        .map(|&c| (c, class_pattern_scaled(c, cfg.image_dim, cfg.pattern_scale)))
        .collect();

    let mut data = Vec::with_capacity(cfg.n * cfg.image_dim);
    for &label in &labels {
        let pattern = &patterns[&label];
        for &p in pattern {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = f64::from(p) + cfg.noise_std * z;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }

    LabeledDataset::new(
        Tensor::new(vec![cfg.n, cfg.image_dim], data)?,
        labels,
        &format!(
            "synth:n{}:d{}:s{}:seed{}",
            cfg.n, cfg.image_dim, cfg.pattern_scale, cfg.seed
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig::default();
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        let c = synth_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn weighted_counts_are_exact() {
        let cfg = SynthConfig {
            n: 1000,
            classes: vec![1, 3, 8],
            class_weights: Some(vec![0.343, 0.329, 0.328]),
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        assert_eq!(ds.indices_of_class(1).len(), 343);
        assert_eq!(ds.indices_of_class(3).len(), 329);
        assert_eq!(ds.indices_of_class(8).len(), 328);
    }

    #[test]
    fn uniform_counts_nearly_equal() {
        let ds = synth_dataset(&SynthConfig {
            n: 100,
            classes: vec![0, 1, 2],
            ..SynthConfig::default()
        })
        .unwrap();
        let counts: Vec<usize> = [0, 1, 2]
            .iter()
            .map(|&c| ds.indices_of_class(c).len())
            .collect();
        assert_eq!(counts.iter().sum::<usize>(), 100);
        assert!(counts.iter().all(|&c| (33..=34).contains(&c)));
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let ds = synth_dataset(&SynthConfig {
            noise_std: 0.3,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(ds
            .images
            .as_slice()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empirical_noise_matches_floor() {
        let cfg = SynthConfig {
            n: 4000,
            image_dim: 32,
            noise_std: 0.05,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        let mut sq_sum = 0.0f64;
        let mut count = 0usize;
        for i in 0..ds.n() {
            let pattern = class_pattern(ds.labels[i], cfg.image_dim);
            for (x, p) in ds.images.row(i).iter().zip(&pattern) {
                let r = f64::from(x - p);
                sq_sum += r * r;
                count += 1;
            }
        }
        let empirical = sq_sum / count as f64;
        let floor = noise_floor(&cfg);
        assert!(
            (empirical - floor).abs() < 0.1 * floor,
            "empirical {empirical:.5} vs floor {floor:.5}"
        );
    }

    #[test]
    fn class_patterns_are_well_separated() {
        for (a, b) in [(1u8, 3u8), (1, 8), (3, 8)] {
            let pa = class_pattern(a, 64);
            let pb = class_pattern(b, 64);
            let dist: f64 = pa
                .iter()
                .zip(&pb)
                .map(|(x, y)| f64::from(x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dist > 1.0, "patterns {a} and {b} too close: {dist}");
        }
    }

    #[test]
    fn pattern_scale_controls_mode_spacing() {
        let d = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| f64::from(x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let wide = d(
            &class_pattern_scaled(1, 64, 0.28),
            &class_pattern_scaled(8, 64, 0.28),
        );
        let narrow = d(
            &class_pattern_scaled(1, 64, 0.14),
            &class_pattern_scaled(8, 64, 0.14),
        );
        // Proportionality holds exactly in real arithmetic; the slack
        // covers f32 quantization of the stored patterns.
        assert!((narrow - 0.5 * wide).abs() < 1e-6);
        assert_eq!(class_pattern(3, 32), class_pattern_scaled(3, 32, 0.28));
        assert!(synth_dataset(&SynthConfig {
            pattern_scale: 0.6,
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        let cfg = SynthConfig {
            class_weights: Some(vec![0.5]),
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig {
            class_weights: Some(vec![0.5, -0.1, 0.6]),
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg).is_err());
    }
}
