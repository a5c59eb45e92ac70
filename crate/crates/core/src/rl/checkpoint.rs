//! `CNFA` agent checkpoints.
//!
//! Same container as encoder checkpoints: magic, version, JSON header, then
//! policy values followed by critic values as f64 LE. The header refers to
//! the frozen encoder by path and SHA-256 of its checkpoint bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::awac::{Agent, AwacConfig, Variant};
use crate::envs::EnvSpec;
use crate::autodiff::Module;
use crate::error::{Error, Result};
use crate::io::{atomic_write, decode_container, encode_container, sha256_hex};
use crate::scalar::Real;

pub const AGENT_MAGIC: &[u8; 4] = b"CNFA";
pub const AGENT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentHeader {
    variant: Variant,
    scalar: String,
    state_dim: usize,
    latent_dim: usize,
    critic_action_dim: usize,
    steps: u64,
    config: AwacConfig,
    encoder_path: String,
    encoder_sha256: String,
    #[serde(default)]
    env: Option<EnvSpec>,
    policy_values: usize,
    critic_values: usize,
}

#[derive(Clone, Debug)]
pub struct AgentCheckpoint<T> {
    pub agent: Agent<T>,
    pub encoder_path: String,
    pub encoder_sha256: String,
    /// Environment the agent was trained and evaluated on.
    pub env: Option<EnvSpec>,
}

impl<T: Real> AgentCheckpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.agent;
        let policy = a.policy.flat_values();
        let critics = a.critics.flat_values();
        let header = AgentHeader {
            variant: a.variant,
            scalar: T::type_name().to_string(),
            state_dim: a.policy.state_dim(),
            latent_dim: a.policy.latent_dim(),
            critic_action_dim: a.critics.q1.input_dim() - a.policy.state_dim(),
            steps: a.steps,
            config: a.config.clone(),
            encoder_path: self.encoder_path.clone(),
            encoder_sha256: self.encoder_sha256.clone(),
            env: self.env.clone(),
            policy_values: policy.len(),
            critic_values: critics.len(),
        };
        let json = serde_json::to_string(&header).expect("agent header serializes");
        let payload: Vec<f64> = policy.iter().chain(&critics).map(|v| v.as_f64()).collect();
        encode_container(AGENT_MAGIC, AGENT_VERSION, &json, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode_container(bytes, AGENT_MAGIC, AGENT_VERSION)?;
        let h: AgentHeader = serde_json::from_str(&c.header).map_err(|e| Error::Format {
            offset: 12,
            detail: format!("bad agent header: {e}"),
        })?;
        h.config.validate()?;
        let mut agent = Agent::<T>::new(h.variant, h.state_dim, h.latent_dim, h.critic_action_dim, h.config);
        agent.steps = h.steps;
        let (np, nc) = (agent.policy.num_values(), agent.critics.num_values());
        if (np, nc) != (h.policy_values, h.critic_values) {
            return Err(Error::Format {
                offset: 12,
                detail: format!(
                    "header declares {}+{} values, architecture has {np}+{nc}",
                    h.policy_values, h.critic_values
                ),
            });
        }
        let values: Vec<T> = c.f64_payload(np + nc)?.into_iter().map(T::lit).collect();
        agent.policy.load_flat(&values[..np])?;
        agent.critics.load_flat(&values[np..])?;
        Ok(Self {
            agent,
            encoder_path: h.encoder_path,
            encoder_sha256: h.encoder_sha256,
            env: h.env,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Checks that `encoder_bytes` are the checkpoint this agent was trained with.
    pub fn verify_encoder(&self, encoder_bytes: &[u8]) -> Result<()> {
        let actual = sha256_hex(encoder_bytes);
        if actual != self.encoder_sha256 {
            return Err(Error::Config(format!(
                "encoder checkpoint hash {actual} does not match the agent's reference {}",
                self.encoder_sha256
            )));
        }
        Ok(())
    }
}
