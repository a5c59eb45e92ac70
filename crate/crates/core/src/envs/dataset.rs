//! `CNFD` offline datasets.
//!
//! Layout: `"CNFD"`, version (u32 LE), state dim (u32 LE), action dim
//! (u32 LE), transition count (u64 LE), then states, actions, rewards and
//! next states as f32 LE row-major, then one 0/1 byte per terminal flag.

use std::path::Path;

use super::{BehaviorPolicy, Env};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::ActionData;
use crate::io::atomic_write;
use crate::rng::seeded;
use crate::scalar::Real;

pub const DATASET_MAGIC: &[u8; 4] = b"CNFD";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: usize = 24;

/// Columnar transition store.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub terminals: Vec<bool>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Config("dataset holds no transitions".into()));
        }
        let checks = [
            ("states", self.states.len(), n * self.state_dim),
            ("actions", self.actions.len(), n * self.action_dim),
            ("next_states", self.next_states.len(), n * self.state_dim),
            ("terminals", self.terminals.len(), n),
        ];
        for (name, actual, expected) in checks {
            if actual != expected {
                return Err(Error::Config(format!("{name} column holds {actual} values, expected {expected}")));
            }
        }
        if let Some(i) = self.actions.iter().position(|a| !(a.abs() <= 1.0)) {
            return Err(Error::Domain {
                op: "dataset",
                detail: format!("action value {} at index {i} outside [-1, 1]", self.actions[i]),
            });
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !finite(&self.states) || !finite(&self.rewards) || !finite(&self.next_states) {
            return Err(Error::NonFinite("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    fn column<T: Real>(values: &[f32], rows: usize, cols: usize) -> Tensor<T> {
        Tensor::new(&[rows, cols], values.iter().map(|&v| T::lit(v as f64)).collect()).expect("column length")
    }

    pub fn states_tensor<T: Real>(&self) -> Tensor<T> {
        Self::column(&self.states, self.len(), self.state_dim)
    }

    pub fn actions_tensor<T: Real>(&self) -> Tensor<T> {
        Self::column(&self.actions, self.len(), self.action_dim)
    }

    pub fn next_states_tensor<T: Real>(&self) -> Tensor<T> {
        Self::column(&self.next_states, self.len(), self.state_dim)
    }

    pub fn rewards_tensor<T: Real>(&self) -> Tensor<T> {
        Self::column(&self.rewards, self.len(), 1)
    }

    pub fn terminals_tensor<T: Real>(&self) -> Tensor<T> {
        let vals = self.terminals.iter().map(|&t| if t { T::one() } else { T::zero() }).collect();
        Tensor::new(&[self.len(), 1], vals).expect("terminal column")
    }

    /// `(state, action)` pairs for encoder pre-training.
    pub fn action_data<T: Real>(&self) -> Result<ActionData<T>> {
        ActionData::new(self.states_tensor(), self.actions_tensor())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(DATASET_HEADER_LEN + n * (4 * (2 * self.state_dim + self.action_dim + 1) + 1));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for col in [&self.states, &self.actions, &self.rewards, &self.next_states] {
            for v in col.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(self.terminals.iter().map(|&t| t as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_HEADER_LEN {
            return Err(Error::Length {
                expected: DATASET_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {:?}, expected \"CNFD\"", String::from_utf8_lossy(&bytes[..4])),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported dataset version {version}, expected {DATASET_VERSION}"),
            });
        }
        let ds = u32_at(8) as usize;
        let da = u32_at(12) as usize;
        let n64 = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let n = usize::try_from(n64).map_err(|_| Error::Format {
            offset: 16,
            detail: format!("transition count {n64} does not fit in memory"),
        })?;
        let expected = (2 * ds + da + 1)
            .checked_mul(4)
            .and_then(|w| w.checked_add(1))
            .and_then(|row| row.checked_mul(n))
            .and_then(|body| body.checked_add(DATASET_HEADER_LEN))
            .ok_or_else(|| Error::Format {
                offset: 8,
                detail: "header dimensions overflow".into(),
            })?;
        if bytes.len() != expected {
            return Err(Error::Length {
                expected,
                actual: bytes.len(),
            });
        }
        let mut offset = DATASET_HEADER_LEN;
        let mut take = |count: usize| {
            let vals: Vec<f32> = bytes[offset..offset + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += 4 * count;
            vals
        };
        let states = take(n * ds);
        let actions = take(n * da);
        let rewards = take(n);
        let next_states = take(n * ds);
        let term_start = expected - n;
        let mut terminals = Vec::with_capacity(n);
        for (i, &b) in bytes[term_start..].iter().enumerate() {
            match b {
                0 => terminals.push(false),
                1 => terminals.push(true),
                other => {
                    return Err(Error::Format {
                        offset: term_start + i,
                        detail: format!("terminal flag byte {other} is neither 0 nor 1"),
                    })
                }
            }
        }
        let ds = OfflineDataset {
            state_dim: ds,
            action_dim: da,
            states,
            actions,
            rewards,
            next_states,
            terminals,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    atomic_write(path, &ds.to_bytes())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    OfflineDataset::from_bytes(&std::fs::read(path)?)
}

/// Rolls out `behavior` in `env` until `n_transitions` are recorded,
/// restarting episodes on a terminal step or the step cap.
pub fn generate_dataset<E: Env + ?Sized>(
    env: &E,
    behavior: &BehaviorPolicy,
    n_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_transitions == 0 {
        return Err(Error::Config("n_transitions must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let mut policy = behavior.clone();
    let (ds, da) = (env.state_dim(), env.action_dim());
    let mut out = OfflineDataset {
        state_dim: ds,
        action_dim: da,
        states: Vec::with_capacity(n_transitions * ds),
        actions: Vec::with_capacity(n_transitions * da),
        rewards: Vec::with_capacity(n_transitions),
        next_states: Vec::with_capacity(n_transitions * ds),
        terminals: Vec::with_capacity(n_transitions),
    };
    let mut state = Vec::new();
    let mut t = env.max_steps();
    while out.len() < n_transitions {
        if t >= env.max_steps() {
            policy.begin_episode(&mut rng);
            state = env.reset(&mut rng);
            t = 0;
        }
        let action = policy.act(&state, &mut rng);
        let step = env.step(&state, &action);
        out.states.extend(state.iter().map(|&v| v as f32));
        out.actions.extend(action.iter().map(|&v| v as f32));
        out.rewards.push(step.reward as f32);
        out.next_states.extend(step.next_state.iter().map(|&v| v as f32));
        out.terminals.push(step.terminal);
        state = step.next_state;
        t = if step.terminal { env.max_steps() } else { t + 1 };
    }
    Ok(out)
}

/// Returns of the complete episodes in a generated dataset, split at
/// terminal flags and every `max_steps` transitions.
pub fn episode_returns(ds: &OfflineDataset, max_steps: usize) -> Vec<f64> {
    let mut returns = Vec::new();
    let (mut total, mut t) = (0.0, 0);
    for i in 0..ds.len() {
        total += ds.rewards[i] as f64;
        t += 1;
        if ds.terminals[i] || t == max_steps {
            returns.push(total);
            total = 0.0;
            t = 0;
        }
    }
    returns
}
