//! Toy environments, scripted behavior policies and offline datasets.

mod bandit;
mod behavior;
mod dataset;
mod pointnav;
mod support;

pub use bandit::{bandit_oracle, BanditEnv, ChainEnv, OracleResult};
pub use behavior::{BehaviorPolicy, Tier};
pub use dataset::{
    episode_returns, generate_dataset, load_dataset, save_dataset, OfflineDataset, DATASET_HEADER_LEN,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use pointnav::{Layout, PointNavEnv, Wall, STEP_SCALE, WALL_MARGIN};
pub use support::{support_violation_rate, SupportSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived, SeededRng};

/// Outcome of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Episode length cap.
    fn max_steps(&self) -> usize;
    /// `(r_min, r_max)` enclosing every reward the env can emit.
    fn reward_bounds(&self) -> (f64, f64);
    fn reset(&self, rng: &mut SeededRng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> Step;
}

pub(crate) fn clip_action(action: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    if clipped.as_slice() != action {
        log::warn!("action {action:?} clipped to [-1, 1]");
    }
    clipped
}

/// Serializable choice of environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    PointNav { layout: Layout },
    Bandit { target: [f64; 2], r_min: f64, r_max: f64 },
    Chain,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::PointNav { layout: Layout::Open }
    }
}

impl EnvSpec {
    pub const NAMES: [&'static str; 4] = ["point-nav", "point-nav-umaze", "bandit", "chain"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "point-nav" => Ok(EnvSpec::PointNav { layout: Layout::Open }),
            "point-nav-umaze" => Ok(EnvSpec::PointNav { layout: Layout::Umaze }),
            "bandit" => Ok(EnvSpec::Bandit {
                target: [0.0, 0.0],
                r_min: 0.4,
                r_max: 0.8,
            }),
            "chain" => Ok(EnvSpec::Chain),
            other => Err(Error::Config(format!(
                "unknown env `{other}` (valid: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn build(&self) -> Environment {
        match self {
            EnvSpec::PointNav { layout } => Environment::PointNav(PointNavEnv::new(*layout)),
            EnvSpec::Bandit { target, .. } => Environment::Bandit(BanditEnv::new(*target)),
            EnvSpec::Chain => Environment::Chain(ChainEnv::default()),
        }
    }

    /// Behavior policy used to collect datasets for this env.
    pub fn behavior(&self, tier: Tier) -> BehaviorPolicy {
        match self {
            EnvSpec::PointNav { layout } => BehaviorPolicy::waypoint(PointNavEnv::new(*layout).waypoints, tier),
            EnvSpec::Bandit { r_min, r_max, .. } => BehaviorPolicy::ring(*r_min, *r_max),
            EnvSpec::Chain => BehaviorPolicy::Uniform,
        }
    }

    /// Action support of the behavior policy, where one is known in closed form.
    pub fn support(&self) -> Option<SupportSpec> {
        match self {
            EnvSpec::Bandit { r_min, r_max, .. } => Some(SupportSpec::Ring {
                r_min: *r_min,
                r_max: *r_max,
            }),
            _ => None,
        }
    }
}

/// Any of the built-in environments.
#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    PointNav(PointNavEnv),
    Bandit(BanditEnv),
    Chain(ChainEnv),
}

impl Environment {
    fn inner(&self) -> &dyn Env {
        match self {
            Environment::PointNav(e) => e,
            Environment::Bandit(e) => e,
            Environment::Chain(e) => e,
        }
    }
}

impl Env for Environment {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }

    fn max_steps(&self) -> usize {
        self.inner().max_steps()
    }

    fn reward_bounds(&self) -> (f64, f64) {
        self.inner().reward_bounds()
    }

    fn reset(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.inner().reset(rng)
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Step {
        self.inner().step(state, action)
    }
}

/// Returns and executed actions of a batch of episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollouts {
    pub returns: Vec<f64>,
    /// Executed actions, row-major with `action_dim` columns.
    pub actions: Vec<f64>,
}

impl Rollouts {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn std_return(&self) -> f64 {
        let n = self.returns.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_return();
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Runs `episodes` episodes, calling `policy(state, rng)` for every action.
/// Episodes end on a terminal step or the env's step cap.
pub fn rollout<E, F>(env: &E, episodes: usize, rng: &mut SeededRng, mut policy: F) -> Result<Rollouts>
where
    E: Env + ?Sized,
    F: FnMut(&[f64], &mut SeededRng) -> Result<Vec<f64>>,
{
    let mut out = Rollouts::default();
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..env.max_steps() {
            let action = policy(&state, rng)?;
            if action.len() != env.action_dim() || action.iter().any(|a| !a.is_finite()) {
                return Err(Error::NonFinite(format!("policy emitted action {action:?}")));
            }
            let step = env.step(&state, &action);
            out.actions.extend_from_slice(&action);
            total += step.reward;
            state = step.next_state;
            if step.terminal {
                break;
            }
        }
        out.returns.push(total);
    }
    Ok(out)
}

/// Mean episode return of a behavior policy, measured by fresh rollouts.
pub fn behavior_rollouts<E: Env + ?Sized>(
    env: &E,
    behavior: &BehaviorPolicy,
    episodes: usize,
    rng: &mut SeededRng,
) -> Rollouts {
    let mut policy = behavior.clone();
    let mut out = Rollouts::default();
    for _ in 0..episodes {
        policy.begin_episode(rng);
        let mut state = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..env.max_steps() {
            let action = policy.act(&state, rng);
            let step = env.step(&state, &action);
            out.actions.extend_from_slice(&action);
            total += step.reward;
            state = step.next_state;
            if step.terminal {
                break;
            }
        }
        out.returns.push(total);
    }
    out
}

/// Random- and expert-tier mean returns, the anchors of normalized scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub random: f64,
    pub expert: f64,
}

impl ReferenceReturns {
    /// Behavior rollouts of the random and expert tiers, both started from
    /// the same start-state stream.
    pub fn measure(spec: &EnvSpec, episodes: usize, seed: u64) -> Self {
        let env = spec.build();
        let mean = |tier| behavior_rollouts(&env, &spec.behavior(tier), episodes, &mut derived(seed, 0)).mean_return();
        Self {
            random: mean(Tier::Random),
            expert: mean(Tier::Expert),
        }
    }

    /// `(R − R_random) / (R_expert − R_random)`.
    pub fn normalize(&self, r: f64) -> f64 {
        (r - self.random) / (self.expert - self.random)
    }
}
