use super::{Env, Step, SupportSpec};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// One-step task with reward `−‖a − target‖₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditEnv {
    pub target: [f64; 2],
}

impl BanditEnv {
    pub fn new(target: [f64; 2]) -> Self {
        Self { target }
    }

    pub fn reward(&self, a: &[f64]) -> f64 {
        -((a[0] - self.target[0]).powi(2) + (a[1] - self.target[1]).powi(2)).sqrt()
    }
}

impl Env for BanditEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        1
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let far = [-1.0f64, 1.0]
            .iter()
            .flat_map(|&x| [-1.0f64, 1.0].map(move |y| (x, y)))
            .map(|(x, y)| ((x - self.target[0]).powi(2) + (y - self.target[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        (-far, 0.0)
    }

    fn reset(&self, _rng: &mut SeededRng) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, _state: &[f64], action: &[f64]) -> Step {
        let a = super::clip_action(action);
        Step {
            next_state: vec![0.0],
            reward: self.reward(&a),
            terminal: true,
        }
    }
}

/// Two states visited alternately, reward 1 in the first and 0 in the
/// second. Actions are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainEnv {
    pub max_steps: usize,
}

impl Default for ChainEnv {
    fn default() -> Self {
        Self { max_steps: 50 }
    }
}

impl ChainEnv {
    pub fn one_hot(index: usize) -> Vec<f64> {
        let mut s = vec![0.0; 2];
        s[index] = 1.0;
        s
    }

    /// Exact Q-values `(Q(s₀), Q(s₁))` by value iteration.
    pub fn value_iteration(gamma: f64, tol: f64) -> (f64, f64) {
        let (mut q0, mut q1) = (0.0f64, 0.0f64);
        loop {
            let n0 = 1.0 + gamma * q1;
            let n1 = gamma * q0;
            let delta = (n0 - q0).abs().max((n1 - q1).abs());
            q0 = n0;
            q1 = n1;
            if delta < tol {
                return (q0, q1);
            }
        }
    }
}

impl Env for ChainEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn reset(&self, _rng: &mut SeededRng) -> Vec<f64> {
        Self::one_hot(0)
    }

    fn step(&self, state: &[f64], _action: &[f64]) -> Step {
        let first = state[0] > 0.5;
        Step {
            next_state: Self::one_hot(if first { 1 } else { 0 }),
            reward: if first { 1.0 } else { 0.0 },
            terminal: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleResult {
    pub action: [f64; 2],
    pub reward: f64,
}

/// Exhaustive search over an inclusive `resolution × resolution` grid on
/// `[−1, 1]²`, restricted to actions inside `spec`.
pub fn bandit_oracle(env: &BanditEnv, spec: &SupportSpec, resolution: usize) -> Result<OracleResult> {
    if resolution < 100 {
        return Err(Error::Config(format!(
            "oracle grid resolution must be at least 100 per axis, got {resolution}"
        )));
    }
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
    let mut best: Option<OracleResult> = None;
    for i in 0..resolution {
        for j in 0..resolution {
            let a = [coord(i), coord(j)];
            if !spec.contains(&a) {
                continue;
            }
            let r = env.reward(&a);
            if best.is_none_or(|b| r > b.reward) {
                best = Some(OracleResult { action: a, reward: r });
            }
        }
    }
    best.ok_or_else(|| Error::Config("no grid point lies inside the support".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn ring() -> SupportSpec {
        SupportSpec::Ring { r_min: 0.4, r_max: 0.8 }
    }

    #[test]
    fn bandit_is_single_step() {
        let env = BanditEnv::new([0.0, 0.0]);
        let s = env.step(&[0.0], &[0.3, 0.4]);
        assert!(s.terminal);
        assert!((s.reward + 0.5).abs() < 1e-15);
    }

    #[test]
    fn oracle_finds_closest_ring_point() {
        let env = BanditEnv::new([0.0, 0.0]);
        let best = bandit_oracle(&env, &ring(), 201).unwrap();
        assert!((best.reward + 0.4).abs() < 1e-12, "{best:?}");
    }

    #[test]
    fn oracle_returns_target_inside_support() {
        let env = BanditEnv::new([0.5, 0.2]);
        let best = bandit_oracle(&env, &ring(), 201).unwrap();
        assert!(best.reward > -1e-9);
        assert!((best.action[0] - 0.5).abs() < 1e-9 && (best.action[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn refined_grid_does_not_lower_reward() {
        let env = BanditEnv::new([0.07, -0.03]);
        let mut prev = f64::NEG_INFINITY;
        for res in [101, 201, 401, 801] {
            let r = bandit_oracle(&env, &ring(), res).unwrap().reward;
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn oracle_bounds_random_in_support_actions() {
        let env = BanditEnv::new([0.0, 0.0]);
        let spec = ring();
        let best = bandit_oracle(&env, &spec, 401).unwrap().reward;
        let mut rng = seeded(9);
        let mut checked = 0;
        while checked < 10_000 {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if spec.contains(&a) {
                assert!(env.reward(&a) <= best + 1e-12);
                checked += 1;
            }
        }
    }

    #[test]
    fn oracle_errors_on_empty_support_and_coarse_grid() {
        let env = BanditEnv::new([0.0, 0.0]);
        let empty = SupportSpec::Ring { r_min: 2.0, r_max: 3.0 };
        assert!(bandit_oracle(&env, &empty, 100).is_err());
        assert!(bandit_oracle(&env, &ring(), 50).is_err());
    }

    #[test]
    fn chain_value_iteration_matches_closed_form() {
        let (q0, q1) = ChainEnv::value_iteration(0.9, 1e-13);
        assert!((q0 - 1.0 / 0.19).abs() < 1e-10);
        assert!((q1 - 0.9 / 0.19).abs() < 1e-10);
    }

    #[test]
    fn chain_alternates_states() {
        let env = ChainEnv::default();
        let s = env.step(&ChainEnv::one_hot(0), &[0.0, 0.0]);
        assert_eq!((s.next_state, s.reward), (ChainEnv::one_hot(1), 1.0));
        let s = env.step(&ChainEnv::one_hot(1), &[0.5, -0.5]);
        assert_eq!((s.next_state, s.reward), (ChainEnv::one_hot(0), 0.0));
    }
}
