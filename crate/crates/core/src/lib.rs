//! One-shot unlearning for variational autoencoders by gradient surgery,
//! with influence-function diagnostics and an evaluation harness.
//!
//! Modules:
//! - [`diffcore`]: tensors, flat parameters, MLP forward/backward,
//!   finite-difference HVPs and conjugate gradient
//! - [`vae`]: architecture, ELBO, Adam training, checkpoints
//! - [`surgeon`]: gradient projection, one-shot unlearning, baselines
//! - [`influence`]: influence estimates with convex probe oracles
//! - [`eval`]: task classifier, feature ratio, Frechet/score proxies
//! - [`data`]: labeled datasets, IDX files, synthetic data

pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod influence;
pub mod surgeon;
pub mod vae;

pub use error::{Error, Result};

pub use data::{load_idx, make_split, subset_classes, synth_dataset, DatasetSplit, ForgetSpec,
    LabeledDataset};
pub use diffcore::{cg_solve, CgConfig, CgSolution, HvpOperator, ParamVector, Tensor};
pub use eval::{
    feature_ratio, frechet_proxy, run_eval, score_proxy, train_feature_classifier, EvalConfig,
    EvalReport, FeatureClassifier,
};
pub use influence::{
    group_conflict, influence_up_loss, influence_up_param, loo_retrain_oracle,
    second_order_group_influence, ConvexProbe, InfluenceConfig, VaeInfluenceTarget,
};
pub use surgeon::{
    gradient_ascent_unlearn, one_shot_unlearn, project_gradient, retrain_oracle, GradientPair,
    ProjectionRule, UnlearnConfig, UnlearnTrace,
};
pub use vae::{compute_gradient, elbo_loss, train, Likelihood, LossKind, LossSpec, TrainConfig,
    VaeArch, VaeModel};
