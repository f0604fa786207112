//! Experiment configuration: one JSON file drives every subcommand.
//!
//! The file is read into a JSON value, `--set` overrides are applied by
//! dotted path, and the result is deserialized into [`ExperimentConfig`].
//! The config hash stamped into every artifact is computed from the fully
//! resolved config (defaults filled in), so two spellings of the same
//! experiment hash identically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use unlearn_core::data::SynthConfig;
use unlearn_core::eval::ClassifierConfig;
use unlearn_core::{EvalConfig, TrainConfig, UnlearnConfig, VaeArch};
use unlearn_core::{Error, Result};

/// Where the images and labels come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Synthetic class-patterned images generated in memory.
    Synth(SynthConfig),
    /// An IDX image/label file pair on disk (the MNIST container format).
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only these classes; all classes when absent.
        #[serde(default)]
        classes: Option<Vec<u8>>,
        /// Keep only the first `limit` examples after class filtering.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Class whose examples are unlearned and whose feature ratio is tracked.
    pub forget_class: u8,
    pub arch: VaeArch,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
    /// Directory all artifacts are written to (created if missing).
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let arch = VaeArch {
            input_dim: synth.image_dim,
            hidden_dims: vec![48, 24],
            latent_dim: 8,
            ..VaeArch::mnist_default()
        };
        Self {
            dataset: DatasetConfig::Synth(synth),
            forget_class: 1,
            arch,
            train: TrainConfig::default(),
            unlearn: UnlearnConfig::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Checks that cut across sections and cannot be expressed per field.
    pub fn validate(&self) -> Result<()> {
        if self.eval.target_class != self.forget_class {
            return Err(Error::Config(format!(
                "eval.target_class ({}) must equal forget_class ({}); \
                 the evaluation tracks the class being unlearned",
                self.eval.target_class, self.forget_class
            )));
        }
        if let DatasetConfig::Idx { limit: Some(0), .. } = self.dataset {
            return Err(Error::Config("dataset.limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// A parsed config plus the hash that names it in artifacts.
pub struct LoadedConfig {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

/// Read `path`, apply `--set` overrides, deserialize and hash.
pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text)?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    let hash = config_hash(&cfg)?;
    Ok(LoadedConfig { cfg, hash })
}

/// First 16 hex chars of the SHA-256 of the resolved config. serde_json
/// orders object keys, so the serialization is canonical.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in &digest[..8] {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Apply one `KEY=VALUE` override. The key is a dotted path into the JSON
/// tree; missing intermediate objects are created. The value is parsed as
/// JSON when possible and taken as a string otherwise, so `--set
/// unlearn.lr=0.004` and `--set dataset.kind=synth` both work.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {spec:?} must look like KEY=VALUE"))
    })?;
    if key.is_empty() {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = serde_json::from_str::<Value>(raw)
        .unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut node = root;
    let mut segments = key.split('.').peekable();
    while let Some(seg) = segments.next() {
        if seg.is_empty() {
            return Err(Error::Config(format!(
                "override key {key:?} has an empty path segment"
            )));
        }
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override key {key:?}: segment {seg:?} does not address an object"
            ))
        })?;
        if segments.peek().is_none() {
            map.insert(seg.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment");
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn override_sets_nested_and_parses_json_values() {
        let mut v = json!({"unlearn": {"lr": 0.001}});
        apply_override(&mut v, "unlearn.lr=0.004").unwrap();
        apply_override(&mut v, "unlearn.projection=never").unwrap();
        apply_override(&mut v, "dataset.classes=[1,3]").unwrap();
        assert_eq!(v["unlearn"]["lr"], json!(0.004));
        assert_eq!(v["unlearn"]["projection"], json!("never"));
        assert_eq!(v["dataset"]["classes"], json!([1, 3]));
    }

    #[test]
    fn override_rejects_malformed_specs() {
        let mut v = json!({});
        assert!(apply_override(&mut v, "no_equals_sign").is_err());
        assert!(apply_override(&mut v, "=5").is_err());
        assert!(apply_override(&mut v, "a..b=5").is_err());
        let mut v = json!({"train": 3});
        assert!(apply_override(&mut v, "train.lr=0.1").is_err());
    }

    #[test]
    fn hash_ignores_spelling_but_not_content() {
        let sparse: ExperimentConfig =
            serde_json::from_value(json!({"forget_class": 1})).unwrap();
        let spelled: ExperimentConfig =
            serde_json::from_value(serde_json::to_value(ExperimentConfig::default()).unwrap())
                .unwrap();
        assert_eq!(
            config_hash(&sparse).unwrap(),
            config_hash(&spelled).unwrap()
        );

        let mut changed = ExperimentConfig::default();
        changed.unlearn.lr *= 2.0;
        assert_ne!(
            config_hash(&changed).unwrap(),
            config_hash(&spelled).unwrap()
        );
        assert_eq!(config_hash(&spelled).unwrap().len(), 16);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let bad = json!({"forget_clas": 1});
        assert!(serde_json::from_value::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn validate_requires_matching_target_class() {
        let mut cfg = ExperimentConfig {
            forget_class: 3,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.eval.target_class = 3;
        assert!(cfg.validate().is_ok());
    }
}
