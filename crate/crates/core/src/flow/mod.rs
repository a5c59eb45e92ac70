//! Conditional action encoders: affine-coupling normalizing flows (bounded
//! tanh/uniform and conventional normal-base variants) and a conditional
//! VAE, with exact likelihoods, inversion, checkpoints and pre-training.

mod base;
mod checkpoint;
mod conditional;
mod coupling;
mod train;
mod vae;

pub use base::BaseKind;
pub use checkpoint::{ActionEncoder, EncoderKind, ENCODER_MAGIC, ENCODER_VERSION};
pub use conditional::{ConditionalFlow, FlowArch, DEFAULT_S_MAX, DEFAULT_TANH_EPS};
pub use coupling::CouplingLayer;
pub use train::{
    dataset_loss, fit, hyperparameter_search, pretrain, run_trials, split_indices, ActionData,
    FlowTrainConfig, LogRow, Pretrainable, PretrainOutcome, SearchOutcome, SearchSpace, TrainingLog,
    TrialParams, TrialResult,
};
pub use vae::{kl_to_standard_normal, ConditionalVae, VaeArch};
