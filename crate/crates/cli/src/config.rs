use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cnf_core::envs::{EnvSpec, Tier};
use cnf_core::flow::{EncoderKind, FlowTrainConfig, SearchSpace};
use cnf_core::moons::{AmplitudeSweep, MoonsConfig};
use cnf_core::rl::AwacConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    pub tier: Tier,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            name: "point-nav".into(),
            tier: Tier::Medium,
        }
    }
}

impl EnvSection {
    pub fn spec(&self) -> Result<EnvSpec, CliError> {
        EnvSpec::from_name(&self.name).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub train: FlowTrainConfig,
    pub search: SearchSpace,
    /// Seed of the hyperparameter draws.
    pub search_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsSection {
    pub data: MoonsConfig,
    pub flow: FlowTrainConfig,
    pub sweep: AmplitudeSweep,
    pub seeds: Vec<u64>,
    /// Grid used for the normalization check.
    pub mass_resolution: usize,
    /// Grid drawn in the density panels.
    pub figure_resolution: usize,
    /// Samples drawn from each flow's own base distribution.
    pub base_samples: usize,
}

impl Default for MoonsSection {
    fn default() -> Self {
        Self {
            data: MoonsConfig::default(),
            flow: FlowTrainConfig {
                layers: 6,
                hidden: 64,
                hidden_layers: 2,
                steps: 3000,
                eval_interval: 500,
                batch_size: 512,
                ..FlowTrainConfig::default()
            },
            sweep: AmplitudeSweep::default(),
            seeds: vec![0, 1, 2],
            mass_resolution: 400,
            figure_resolution: 80,
            base_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory that relative output paths are resolved against. The
    /// `CNF_OUTPUT_ROOT` environment variable takes precedence.
    pub root: Option<PathBuf>,
}

/// One JSON document holding every module's settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub dataset: DatasetSection,
    pub flow: FlowSection,
    pub rl: AwacConfig,
    pub moons: MoonsSection,
    pub output: OutputSection,
}

pub const OUTPUT_ROOT_VAR: &str = "CNF_OUTPUT_ROOT";

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: cnf_core::Error| CliError::Usage(e.to_string());
        self.env.spec()?;
        self.flow.train.validate().map_err(usage)?;
        self.rl.validate().map_err(usage)?;
        self.moons.data.validate().map_err(usage)?;
        self.moons.flow.validate().map_err(usage)?;
        self.moons.sweep.validate().map_err(usage)?;
        if self.moons.seeds.is_empty() {
            return Err(CliError::Usage("moons.seeds must not be empty".into()));
        }
        if self.dataset.n == 0 {
            return Err(CliError::Usage("dataset.n must be positive".into()));
        }
        Ok(())
    }

    /// The fully resolved document, defaults included.
    pub fn resolved(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn output_root(&self) -> Option<PathBuf> {
        std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .or_else(|| self.output.root.clone())
    }

    /// Resolves a relative output path against the output root.
    pub fn output_path(&self, p: &Path) -> PathBuf {
        match self.output_root() {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Settings whose values differ from the published ones, as
    /// `(field, published, configured)`.
    pub fn overrides(&self) -> Vec<Override> {
        let mut out = Vec::new();
        let mut check = |field: &str, published: serde_json::Value, value: serde_json::Value| {
            if published != value {
                out.push(Override {
                    field: field.into(),
                    published,
                    value,
                });
            }
        };
        use serde_json::json;
        check("rl.lambda", json!(1.0 / 3.0), json!(self.rl.lambda));
        check("rl.actor_lr", json!(3e-4), json!(self.rl.actor_lr));
        check("rl.critic_lr", json!(3e-4), json!(self.rl.critic_lr));
        check("rl.steps", json!(1_000_000), json!(self.rl.steps));
        check("rl.hidden", json!([256, 256]), json!(self.rl.hidden));
        check("rl.batch_size", json!(256), json!(self.rl.batch_size));
        check("rl.eval_episodes", json!(10), json!(self.rl.eval_episodes));
        if self.flow.train.kind != EncoderKind::Vae {
            check("flow.steps", json!(100_000), json!(self.flow.train.steps));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub field: String,
    pub published: serde_json::Value,
    pub value: serde_json::Value,
}
