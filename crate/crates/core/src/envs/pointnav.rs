use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Env, Step};
use crate::rng::SeededRng;

/// Movement per unit action.
pub const STEP_SCALE: f64 = 0.1;
/// Distance kept from a wall after a blocked move.
pub const WALL_MARGIN: f64 = 1e-6;

/// Axis-aligned wall segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "orientation", rename_all = "snake_case")]
pub enum Wall {
    /// Blocks horizontal motion across `x` for `y ∈ [y0, y1]`.
    Vertical { x: f64, y0: f64, y1: f64 },
    /// Blocks vertical motion across `y` for `x ∈ [x0, x1]`.
    Horizontal { y: f64, x0: f64, x1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Open,
    Umaze,
}

/// Point mass on `[−1, 1]²` pulled toward a goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointNavEnv {
    pub walls: Vec<Wall>,
    pub goal: [f64; 2],
    pub start_lo: [f64; 2],
    pub start_hi: [f64; 2],
    pub max_steps: usize,
    /// Behavior waypoints ending at the goal.
    pub waypoints: Vec<[f64; 2]>,
}

impl PointNavEnv {
    pub fn new(layout: Layout) -> Self {
        match layout {
            Layout::Open => Self {
                walls: Vec::new(),
                goal: [0.6, 0.6],
                start_lo: [-0.8, -0.8],
                start_hi: [-0.6, -0.6],
                max_steps: 50,
                waypoints: vec![[0.6, 0.6]],
            },
            Layout::Umaze => Self {
                walls: vec![Wall::Horizontal {
                    y: 0.0,
                    x0: -1.0,
                    x1: 0.3,
                }],
                goal: [-0.6, 0.6],
                start_lo: [-0.8, -0.8],
                start_hi: [-0.6, -0.5],
                max_steps: 80,
                waypoints: vec![[0.65, -0.3], [0.65, 0.35], [-0.6, 0.6]],
            },
        }
    }

    /// Deterministic move with axis-separable wall clipping: x first, then y.
    pub fn advance(&self, pos: [f64; 2], action: [f64; 2]) -> [f64; 2] {
        let dx = STEP_SCALE * action[0];
        let dy = STEP_SCALE * action[1];
        let mut x = (pos[0] + dx).clamp(-1.0, 1.0);
        for w in &self.walls {
            if let Wall::Vertical { x: wx, y0, y1 } = *w {
                if pos[1] >= y0 && pos[1] <= y1 {
                    if pos[0] < wx && x >= wx {
                        x = x.min(wx - WALL_MARGIN);
                    } else if pos[0] > wx && x <= wx {
                        x = x.max(wx + WALL_MARGIN);
                    }
                }
            }
        }
        let mut y = (pos[1] + dy).clamp(-1.0, 1.0);
        for w in &self.walls {
            if let Wall::Horizontal { y: wy, x0, x1 } = *w {
                if x >= x0 && x <= x1 {
                    if pos[1] < wy && y >= wy {
                        y = y.min(wy - WALL_MARGIN);
                    } else if pos[1] > wy && y <= wy {
                        y = y.max(wy + WALL_MARGIN);
                    }
                }
            }
        }
        [x, y]
    }

    pub fn reward_at(&self, pos: [f64; 2]) -> f64 {
        -((pos[0] - self.goal[0]).powi(2) + (pos[1] - self.goal[1]).powi(2)).sqrt()
    }
}

impl Env for PointNavEnv {
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
        (-2.0 * std::f64::consts::SQRT_2, 0.0)
    }

    fn reset(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..2)
            .map(|i| rng.random_range(self.start_lo[i]..self.start_hi[i]))
            .collect()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Step {
        let a = super::clip_action(action);
        let next = self.advance([state[0], state[1]], [a[0], a[1]]);
        Step {
            next_state: next.to_vec(),
            reward: self.reward_at(next),
            terminal: false,
        }
    }
}
