//! Advantage-weighted actor-critic over a frozen latent action decoder.

mod awac;
mod checkpoint;
mod critic;
mod decoder;
mod policy;

pub use awac::{
    advantage_weights, advantage_weights_from, critic_loss_on, critic_target, decoded_sample_on, evaluate,
    policy_loss_on, train, train_latent_direct, Agent, AwacConfig, Batch, Evaluation, Losses, MetricRecord, Metrics,
    TargetMode, TrainOutcome, Variant, MAX_EXPONENT,
};
pub use checkpoint::{AgentCheckpoint, AGENT_MAGIC, AGENT_VERSION};
pub use critic::TwinCritic;
pub use decoder::{ActionCodec, ActionDecoder, IdentityDecoder};
pub use policy::{LatentPolicy, Squash, LOGVAR_MAX, LOGVAR_MIN};
